//! Dataset manifests, clip loading and deterministic batching.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{decode_wav, patchify, resample, AudioClip, PatchSequence, DEFAULT_PATCH_LENGTH, SAMPLE_RATE};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::validation("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub labels: Vec<String>,
}

/// A list of labelled audio files. The order of `classes` is the label
/// vector's index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::validation("classes", "must not be empty"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::validation("classes", format!("duplicate class `{c}`")));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.labels.is_empty() {
                return Err(Error::validation(format!("entries[{i}].labels"), "must not be empty"));
            }
            if let Some(l) = e.labels.iter().find(|l| !self.classes.contains(l)) {
                return Err(Error::validation(
                    format!("entries[{i}].labels"),
                    format!("`{l}` is not a declared class"),
                ));
            }
        }
        Ok(())
    }

    pub fn label_vector(&self, entry: &ManifestEntry) -> Vec<f32> {
        self.classes
            .iter()
            .map(|c| if entry.labels.contains(c) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// How clips are turned into fixed-size training units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub patch_length: usize,
    /// Length of one unit. Longer clips are cut into non-overlapping units
    /// with the remainder dropped; shorter clips are zero-padded to one unit.
    pub chunk_seconds: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            patch_length: DEFAULT_PATCH_LENGTH,
            chunk_seconds: 1.0,
        }
    }
}

impl LoadOptions {
    /// Patches per unit.
    pub fn tokens(&self) -> usize {
        ((self.chunk_seconds * SAMPLE_RATE as f64).round() as usize / self.patch_length).max(1)
    }
}

/// Decoded, patched units of one manifest, all with the same `T × P` shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub split: Split,
    pub items: Vec<PatchSequence>,
    pub options: LoadOptions,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>, options: LoadOptions) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base, options)
    }

    pub fn from_manifest(manifest: &DatasetManifest, base: &Path, options: LoadOptions) -> Result<Self> {
        manifest.validate()?;
        let clips: Vec<(AudioClip, Vec<f32>)> = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                let mut clip = decode_wav(&path)?;
                clip.source_id = e.path.to_string_lossy().into_owned();
                Ok((clip, manifest.label_vector(e)))
            })
            .collect::<Result<_>>()?;
        Self::from_clips(manifest.classes.clone(), manifest.split, clips, options)
    }

    /// Build from in-memory clips; each is resampled to 16 kHz and cut into units.
    pub fn from_clips(
        classes: Vec<String>,
        split: Split,
        clips: Vec<(AudioClip, Vec<f32>)>,
        options: LoadOptions,
    ) -> Result<Self> {
        let unit = options.tokens() * options.patch_length;
        let per_clip: Vec<Vec<PatchSequence>> = clips
            .into_par_iter()
            .map(|(clip, label)| {
                if label.len() != classes.len() {
                    return Err(Error::shape("label", &[label.len()], &[classes.len()]));
                }
                let mut clip = resample(&clip, SAMPLE_RATE)?;
                if clip.samples.len() < unit {
                    clip.samples.resize(unit, 0.0);
                }
                let n_units = clip.samples.len() / unit;
                (0..n_units)
                    .map(|u| {
                        let part = AudioClip {
                            samples: clip.samples[u * unit..(u + 1) * unit].to_vec(),
                            sample_rate: SAMPLE_RATE,
                            source_id: clip.source_id.clone(),
                        };
                        let id = if n_units == 1 {
                            clip.source_id.clone()
                        } else {
                            format!("{}#{u}", clip.source_id)
                        };
                        let mut seq = PatchSequence::new(patchify(&part, options.patch_length)?, label.clone(), id)?;
                        seq.source_id = clip.source_id.clone();
                        Ok(seq)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            classes,
            split,
            items: per_clip.into_iter().flatten().collect(),
            options,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Shuffled batches covering every unit exactly once; the last batch may
    /// be short. The order depends only on `epoch_seed`.
    pub fn batches(&self, batch_size: usize, epoch_seed: u64) -> Result<BatchIter<'_>> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        self.batches_in_order(batch_size, order)
    }

    /// Batches in manifest order.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<BatchIter<'_>> {
        self.batches_in_order(batch_size, (0..self.items.len()).collect())
    }

    fn batches_in_order(&self, batch_size: usize, order: Vec<usize>) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.items.is_empty() {
            return Err(Error::validation("manifest", "dataset has no entries"));
        }
        Ok(BatchIter {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    /// Index of each unit's source clip, in first-appearance order.
    pub fn source_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            let g = *index.entry(&item.source_id).or_insert_with(|| {
                groups.push((item.source_id.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(i);
        }
        groups
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `B × T × P`
    pub patches: Tensor<f32>,
    /// `B × C`
    pub labels: Tensor<f32>,
    pub indices: Vec<usize>,
    pub clip_ids: Vec<String>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let items: Vec<&PatchSequence> = indices.iter().map(|&i| &self.dataset.items[i]).collect();
        let (t, p) = (items[0].n_patches(), items[0].patch_length());
        let c = self.dataset.n_classes();
        let mut patches = Vec::with_capacity(items.len() * t * p);
        let mut labels = Vec::with_capacity(items.len() * c);
        for it in &items {
            patches.extend_from_slice(it.patches.data());
            labels.extend_from_slice(&it.label);
        }
        Some(Batch {
            patches: Tensor::new(&[items.len(), t, p], patches).expect("uniform unit shape"),
            labels: Tensor::new(&[items.len(), c], labels).expect("label width"),
            clip_ids: items.iter().map(|it| it.clip_id.clone()).collect(),
            indices,
        })
    }
}
