//! Binary checkpoint format.
//!
//! ```text
//! "ADAF"  u32 version  u32 count
//! count × { u32 name_len, name (UTF-8), u32 rank, rank × u64 dim, f32 values }
//! u64 json_len, json
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::optim::Adam;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"ADAF";
pub const VERSION: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const ADAM_STEP: &str = "adam.step";
const RNG_SEED: &str = "rng.seed";
const EPOCH: &str = "train.epoch";

/// Configuration snapshot stored after the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    pub run_label: String,
    /// Unit length the training data was cut into.
    pub chunk_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: CheckpointMeta,
}

/// Split a `u64` into four 16-bit chunks, each exactly representable in f32.
fn u64_to_chunks(x: u64) -> Tensor<f32> {
    let data = (0..4).map(|i| ((x >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(&[4], data).expect("four chunks")
}

fn chunks_to_u64(t: &Tensor<f32>) -> Result<u64> {
    if t.shape() != [4] {
        return Err(Error::Checkpoint(format!("integer tensor has shape {:?}", t.shape())));
    }
    let mut x = 0u64;
    for (i, &c) in t.data().iter().enumerate() {
        if !(0.0..=65535.0).contains(&c) || c.fract() != 0.0 {
            return Err(Error::Checkpoint(format!("invalid integer chunk {c}")));
        }
        x |= (c as u64) << (16 * i);
    }
    Ok(x)
}

/// Training state as restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_state(params: &ParamStore<f32>, opt: &Adam, epoch: usize, seed: u64, meta: CheckpointMeta) -> Self {
        let mut tensors = Vec::new();
        for (name, t) in params.iter() {
            tensors.push((format!("{PARAM}{name}"), t.clone()));
        }
        for ((name, _), m) in params.iter().zip(&opt.m) {
            tensors.push((format!("{ADAM_M}{name}"), m.clone()));
        }
        for ((name, _), v) in params.iter().zip(&opt.v) {
            tensors.push((format!("{ADAM_V}{name}"), v.clone()));
        }
        tensors.push((ADAM_STEP.into(), u64_to_chunks(opt.step)));
        tensors.push((RNG_SEED.into(), u64_to_chunks(seed)));
        tensors.push((EPOCH.into(), u64_to_chunks(epoch as u64)));
        Checkpoint { tensors, meta }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Model parameters in storage order, with the `param/` prefix removed.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(PARAM).map(|n| (n, t)))
    }

    /// Copy stored parameters into `store`, which must have the same names.
    pub fn load_params(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let found: Vec<_> = self.params().collect();
        if found.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter tensors, model expects {}",
                found.len(),
                store.len()
            )));
        }
        store.load_named(found)
    }

    /// Rebuild the model described by the snapshot and load its parameters.
    pub fn model(&self) -> Result<(Model, ParamStore<f32>)> {
        let (model, mut store) = Model::new::<f32>(&self.meta.model, self.meta.train.seed)?;
        self.load_params(&mut store)?;
        Ok((model, store))
    }

    pub fn epoch(&self) -> Result<usize> {
        let t = self
            .tensor(EPOCH)
            .ok_or_else(|| Error::Checkpoint(format!("missing `{EPOCH}`")))?;
        Ok(chunks_to_u64(t)? as usize)
    }

    /// Restore the full training state into a freshly built `store`.
    pub fn restore(&self, mut store: ParamStore<f32>) -> Result<TrainState> {
        self.load_params(&mut store)?;
        let cfg = &self.meta.train;
        let mut opt = Adam::new(store.tensors(), cfg.beta1, cfg.beta2, cfg.eps);
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [(ADAM_M, &mut opt.m[i]), (ADAM_V, &mut opt.v[i])] {
                let key = format!("{prefix}{name}");
                let t = self
                    .tensor(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::shape("checkpoint optimizer state", t.shape(), slot.shape()));
                }
                *slot = t.clone();
            }
        }
        let get = |name: &str| {
            self.tensor(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
                .and_then(chunks_to_u64)
        };
        opt.step = get(ADAM_STEP)?;
        Ok(TrainState {
            params: store,
            optimizer: opt,
            epoch: get(EPOCH)? as usize,
            seed: get(RNG_SEED)?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let json = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing ADAF magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint(format!("tensor name at byte {} is not UTF-8", r.pos - len)))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let json_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(json_len)?)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
