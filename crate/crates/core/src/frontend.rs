//! Learnable front ends mapping waveform patches to embeddings.
//!
//! Three variants share one interface, taking `B×T×P` patches to `B×T×E`
//! embeddings:
//!
//! - **baseline**: one dense projection `P → hidden → E` per patch;
//! - **moe**: `N_F` such projections ("experts") mixed by a router;
//! - **bank-of-filterbanks**: `N_F` banks of learnable FIR filters, each
//!   convolved with the patch (same-length zero padding), pooled over time
//!   (max or mean) and rectified, then mixed by the router.
//!
//! The router is an MLP over the raw patch whose logits `x_sr` are
//! sparsified as `x_w = softmax(α · softmax(x_sr))`. With a large `α` the
//! outer softmax saturates and each patch is effectively sent to one route.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{combine, stack, Var};
use crate::error::{Error, Result};
use crate::params::{uniform_fan_in, Mlp, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontEndKind {
    Baseline,
    Moe,
    BankOfFilterbanks,
}

impl FrontEndKind {
    pub fn short_name(self) -> &'static str {
        match self {
            FrontEndKind::Baseline => "baseline",
            FrontEndKind::Moe => "moe",
            FrontEndKind::BankOfFilterbanks => "bf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub kind: FrontEndKind,
    pub n_filterbanks: usize,
    pub pooling: Pooling,
    pub alpha: f64,
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub filters_per_bank: usize,
    pub kernel_length: usize,
    pub router_widths: Vec<usize>,
    pub patch_length: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            kind: FrontEndKind::BankOfFilterbanks,
            n_filterbanks: 2,
            pooling: Pooling::Max,
            alpha: 100.0,
            embed_dim: 64,
            hidden_width: 2048,
            filters_per_bank: 64,
            kernel_length: 320,
            router_widths: vec![2048, 2048, 2048],
            patch_length: 400,
        }
    }
}

impl FrontEndConfig {
    /// Copy with the baseline's route count forced to one.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        if c.kind == FrontEndKind::Baseline {
            c.n_filterbanks = 1;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let f = |s: &str| format!("frontend.{s}");
        if self.n_filterbanks == 0 {
            return Err(Error::validation(f("n_filterbanks"), "must be at least 1"));
        }
        if self.kind == FrontEndKind::Baseline && self.n_filterbanks != 1 {
            return Err(Error::validation(f("n_filterbanks"), "baseline uses exactly one route"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(f("alpha"), "must be positive and finite"));
        }
        if self.patch_length == 0 {
            return Err(Error::validation(f("patch_length"), "must be at least 1"));
        }
        if self.embed_dim == 0 || self.hidden_width == 0 {
            return Err(Error::validation(f("embed_dim"), "dimensions must be positive"));
        }
        if self.router_widths.contains(&0) {
            return Err(Error::validation(f("router_widths"), "widths must be positive"));
        }
        if self.kind == FrontEndKind::BankOfFilterbanks {
            if self.filters_per_bank != self.embed_dim {
                return Err(Error::validation(f("filters_per_bank"), "must equal embed_dim"));
            }
            if self.kernel_length == 0 || self.kernel_length > self.patch_length {
                return Err(Error::validation(f("kernel_length"), "must be in 1..=patch_length"));
            }
        }
        Ok(())
    }

    /// Run label such as `bf-nf2-max`.
    pub fn label(&self) -> String {
        match self.kind {
            FrontEndKind::Baseline => "baseline".into(),
            FrontEndKind::Moe => format!("moe-nf{}", self.n_filterbanks),
            FrontEndKind::BankOfFilterbanks => {
                let pool = match self.pooling {
                    Pooling::Max => "max",
                    Pooling::Avg => "avg",
                };
                format!("bf-nf{}-{pool}", self.n_filterbanks)
            }
        }
    }
}

/// Router result recorded on the graph, over `N` flattened patches.
#[derive(Debug, Clone, Copy)]
pub struct RouterVars<'g, F: Real> {
    /// `x_sr`, `N × N_F`
    pub logits: Var<'g, F>,
    /// `x_w`, `N × N_F`
    pub weights: Var<'g, F>,
}

/// Detached router result for a `B×T` grid of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterOutput {
    /// `B × T × N_F`
    pub weights: Tensor<f64>,
    /// `B × T × N_F`
    pub logits: Tensor<f64>,
    /// Row-wise argmax of `weights`, `B·T` entries.
    pub route_index: Vec<usize>,
}

impl RouterOutput {
    pub fn from_vars<F: Real>(r: &RouterVars<'_, F>, batch: usize, tokens: usize) -> Result<Self> {
        let nf = r.weights.value().last_dim();
        let weights = r.weights.value().cast::<f64>().reshape(&[batch, tokens, nf])?;
        let logits = r.logits.value().cast::<f64>().reshape(&[batch, tokens, nf])?;
        let route_index = weights.rows().map(argmax).collect();
        Ok(RouterOutput {
            weights,
            logits,
            route_index,
        })
    }
}

/// Index of the first maximal entry.
pub fn argmax<F: PartialOrd + Copy>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `softmax(α · softmax(x_sr))` along the last axis.
pub fn sparsify<'g, F: Real>(logits: Var<'g, F>, alpha: f64) -> Result<Var<'g, F>> {
    logits.softmax_last()?.scale(F::lit(alpha)).softmax_last()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRouter {
    pub mlp: Mlp,
    pub alpha: f64,
}

impl SparseRouter {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, cfg: &FrontEndConfig) -> Self {
        let mut widths = vec![cfg.patch_length];
        widths.extend(&cfg.router_widths);
        widths.push(cfg.n_filterbanks);
        SparseRouter {
            mlp: Mlp::new(store, rng, "router", &widths),
            alpha: cfg.alpha,
        }
    }

    /// `patches` is `N × P`.
    pub fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], patches: Var<'g, F>) -> Result<RouterVars<'g, F>> {
        let logits = self.mlp.forward(vars, patches)?;
        let weights = sparsify(logits, self.alpha)?;
        Ok(RouterVars { logits, weights })
    }
}

/// One bank: `filters × K` kernels and a bias per filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBank {
    pub kernels: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBanks {
    pub banks: Vec<FilterBank>,
    pub pooling: Pooling,
}

impl FilterBanks {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, cfg: &FrontEndConfig) -> Self {
        let banks = (0..cfg.n_filterbanks)
            .map(|i| FilterBank {
                kernels: store.add(
                    format!("bank.{i}.kernels"),
                    uniform_fan_in(rng, &[cfg.filters_per_bank, cfg.kernel_length], cfg.kernel_length),
                ),
                bias: store.add(format!("bank.{i}.bias"), Tensor::zeros(&[cfg.filters_per_bank])),
            })
            .collect();
        FilterBanks {
            banks,
            pooling: cfg.pooling,
        }
    }

    /// Pre-pooling response of one bank: `N × filters × P`.
    pub fn responses<'g, F: Real>(&self, vars: &[Var<'g, F>], patches: Var<'g, F>, bank: usize) -> Result<Var<'g, F>> {
        let shape = patches.shape();
        let (n, p) = (shape[0], shape[1]);
        let b = &self.banks[bank];
        patches
            .reshape(&[n, 1, p])?
            .conv1d_same(vars[b.kernels.0], vars[b.bias.0])
    }

    /// `N × P` patches to per-bank embeddings `N × N_F × E`
    /// (filter, pool over time, rectify).
    pub fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], patches: Var<'g, F>) -> Result<Var<'g, F>> {
        let per_bank = (0..self.banks.len())
            .map(|i| {
                let r = self.responses(vars, patches, i)?;
                let pooled = match self.pooling {
                    Pooling::Max => r.max_over_last()?,
                    Pooling::Avg => r.mean_over_last()?,
                };
                Ok(pooled.relu())
            })
            .collect::<Result<Vec<_>>>()?;
        stack(&per_bank, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrontEndNet {
    Baseline(Mlp),
    Moe { experts: Vec<Mlp>, router: SparseRouter },
    Bank { banks: FilterBanks, router: SparseRouter },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEnd {
    pub config: FrontEndConfig,
    pub net: FrontEndNet,
}

/// Front end output for one batch.
#[derive(Debug, Clone, Copy)]
pub struct FrontEndOutput<'g, F: Real> {
    /// `B × T × E`
    pub embeddings: Var<'g, F>,
    /// Per-route embeddings `B × T × N_F × E`, absent for the baseline.
    pub per_route: Option<Var<'g, F>>,
    pub router: Option<RouterVars<'g, F>>,
}

impl FrontEnd {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, config: &FrontEndConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let dense_widths = [config.patch_length, config.hidden_width, config.embed_dim];
        let net = match config.kind {
            FrontEndKind::Baseline => FrontEndNet::Baseline(Mlp::new(store, rng, "baseline", &dense_widths)),
            FrontEndKind::Moe => {
                let experts = (0..config.n_filterbanks)
                    .map(|i| Mlp::new(store, rng, &format!("expert.{i}"), &dense_widths))
                    .collect();
                let router = SparseRouter::new(store, rng, &config);
                FrontEndNet::Moe { experts, router }
            }
            FrontEndKind::BankOfFilterbanks => {
                let banks = FilterBanks::new(store, rng, &config);
                let router = SparseRouter::new(store, rng, &config);
                FrontEndNet::Bank { banks, router }
            }
        };
        Ok(FrontEnd { config, net })
    }

    pub fn router(&self) -> Option<&SparseRouter> {
        match &self.net {
            FrontEndNet::Baseline(_) => None,
            FrontEndNet::Moe { router, .. } | FrontEndNet::Bank { router, .. } => Some(router),
        }
    }

    pub fn filter_banks(&self) -> Option<&FilterBanks> {
        match &self.net {
            FrontEndNet::Bank { banks, .. } => Some(banks),
            _ => None,
        }
    }

    /// `B × T × P` patches to `B × T × E` embeddings.
    pub fn forward<'g, F: Real>(&self, vars: &[Var<'g, F>], patches: Var<'g, F>) -> Result<FrontEndOutput<'g, F>> {
        let shape = patches.shape();
        if shape.len() != 3 || shape[2] != self.config.patch_length {
            return Err(Error::shape(
                "front end input",
                &shape,
                &[0, 0, self.config.patch_length],
            ));
        }
        let (b, t, p) = (shape[0], shape[1], shape[2]);
        let flat = patches.reshape(&[b * t, p])?;
        let e = self.config.embed_dim;
        let mixed = |routes: Var<'g, F>, r: RouterVars<'g, F>| -> Result<FrontEndOutput<'g, F>> {
            let nf = self.config.n_filterbanks;
            let routes = routes.reshape(&[b, t, nf, e])?;
            let weights = r.weights.reshape(&[b, t, nf])?;
            Ok(FrontEndOutput {
                embeddings: combine(routes, weights)?,
                per_route: Some(routes),
                router: Some(r),
            })
        };
        match &self.net {
            FrontEndNet::Baseline(mlp) => Ok(FrontEndOutput {
                embeddings: mlp.forward(vars, flat)?.reshape(&[b, t, e])?,
                per_route: None,
                router: None,
            }),
            FrontEndNet::Moe { experts, router } => {
                let outs = experts
                    .iter()
                    .map(|m| m.forward(vars, flat))
                    .collect::<Result<Vec<_>>>()?;
                mixed(stack(&outs, 1)?, router.forward(vars, flat)?)
            }
            FrontEndNet::Bank { banks, router } => mixed(banks.forward(vars, flat)?, router.forward(vars, flat)?),
        }
    }

    /// Run only the router on `B × T × P` patches.
    pub fn route<'g, F: Real>(&self, vars: &[Var<'g, F>], patches: Var<'g, F>) -> Result<Option<RouterOutput>> {
        let Some(router) = self.router() else {
            return Ok(None);
        };
        let shape = patches.shape();
        let flat = patches.reshape(&[shape[0] * shape[1], shape[2]])?;
        let r = router.forward(vars, flat)?;
        RouterOutput::from_vars(&r, shape[0], shape[1]).map(Some)
    }
}

#[cfg(test)]
mod tests;
