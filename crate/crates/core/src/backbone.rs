//! Pre-norm transformer encoder over the embedding sequence, with a
//! mean-pooled linear classification head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{scaled_dot_attention, Var};
use crate::error::{Error, Result};
use crate::params::{Dense, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// 0 until resolved from the dataset's class list.
    pub n_classes: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Learn an `E → d` projection even when `E = d`.
    pub project_input: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ff_dim: 256,
            n_classes: 0,
            max_len: 40,
            dropout: 0.0,
            project_input: false,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |s: &str| format!("backbone.{s}");
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::validation(
                f("heads"),
                "model_dim must be a positive multiple of heads",
            ));
        }
        if self.ff_dim == 0 {
            return Err(Error::validation(f("ff_dim"), "must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::validation(f("n_classes"), "need at least 2 classes"));
        }
        if self.max_len == 0 {
            return Err(Error::validation(f("max_len"), "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(f("dropout"), "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        LayerNormParams {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], F::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], x: Var<'g, F>) -> Result<Var<'g, F>> {
        x.layer_norm(vars[self.gain.0], vars[self.bias.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: LayerNormParams,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub out: Dense,
    pub ff_norm: LayerNormParams,
    pub ff_in: Dense,
    pub ff_out: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub input: Option<Dense>,
    pub positions: ParamId,
    pub blocks: Vec<Block>,
    pub head: Dense,
}

impl Backbone {
    /// `embed_dim` is the front end's `E`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        config: &BackboneConfig,
        embed_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let input =
            (config.project_input || embed_dim != d).then(|| Dense::new(store, rng, "backbone.input", embed_dim, d));
        let positions = store.add("backbone.positions", Tensor::zeros(&[config.max_len, d]));
        let blocks = (0..config.layers)
            .map(|i| {
                let n = |s: &str| format!("backbone.{i}.{s}");
                Block {
                    attn_norm: LayerNormParams::new(store, &n("attn_norm"), d),
                    query: Dense::new(store, rng, &n("query"), d, d),
                    key: Dense::new(store, rng, &n("key"), d, d),
                    value: Dense::new(store, rng, &n("value"), d, d),
                    out: Dense::new(store, rng, &n("out"), d, d),
                    ff_norm: LayerNormParams::new(store, &n("ff_norm"), d),
                    ff_in: Dense::new(store, rng, &n("ff_in"), d, config.ff_dim),
                    ff_out: Dense::new(store, rng, &n("ff_out"), config.ff_dim, d),
                }
            })
            .collect();
        let head = Dense::new(store, rng, "head", d, config.n_classes);
        Ok(Backbone {
            config: config.clone(),
            input,
            positions,
            blocks,
            head,
        })
    }

    /// `B×T×E` embeddings to `B×T×d`. Pass an RNG to enable dropout.
    pub fn encode<'g, F: Real>(
        &self,
        vars: &[Var<'g, F>],
        embeddings: Var<'g, F>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'g, F>> {
        let shape = embeddings.shape();
        if shape.len() != 3 {
            return Err(Error::shape("encode", &shape, &[0, 0, self.config.model_dim]));
        }
        let (b, t) = (shape[0], shape[1]);
        if t > self.config.max_len {
            return Err(Error::SequenceLength {
                len: t,
                max: self.config.max_len,
            });
        }
        let (d, h) = (self.config.model_dim, self.config.heads);
        let mut x = match &self.input {
            Some(p) => p.forward(vars, embeddings)?,
            None => embeddings,
        };
        x = x.add_broadcast(vars[self.positions.0].narrow(t)?)?;

        let p = self.config.dropout;
        let mut drop = |v: Var<'g, F>| -> Result<Var<'g, F>> {
            match dropout_rng.as_deref_mut() {
                Some(rng) => v.dropout(p, true, rng),
                None => Ok(v),
            }
        };
        let heads = |v: Var<'g, F>| v.reshape(&[b, t, h, d / h])?.swap_axes12();
        for block in &self.blocks {
            let n = block.attn_norm.forward(vars, x)?;
            let q = heads(block.query.forward(vars, n)?)?;
            let k = heads(block.key.forward(vars, n)?)?;
            let v = heads(block.value.forward(vars, n)?)?;
            let a = scaled_dot_attention(q, k, v)?.swap_axes12()?.reshape(&[b, t, d])?;
            x = x.add(drop(block.out.forward(vars, a)?)?)?;

            let n = block.ff_norm.forward(vars, x)?;
            let f = block.ff_out.forward(vars, block.ff_in.forward(vars, n)?.relu())?;
            x = x.add(drop(f)?)?;
        }
        Ok(x)
    }

    /// Clip logits `B×C`: mean over tokens, then the head.
    pub fn classify<'g, F: Real>(&self, vars: &[Var<'g, F>], encoded: Var<'g, F>) -> Result<Var<'g, F>> {
        self.head.forward(vars, encoded.mean_axis(1)?)
    }

    /// Per-token logits `B×T×C` from the same head.
    pub fn token_logits<'g, F: Real>(&self, vars: &[Var<'g, F>], encoded: Var<'g, F>) -> Result<Var<'g, F>> {
        self.head.forward(vars, encoded)
    }
}
