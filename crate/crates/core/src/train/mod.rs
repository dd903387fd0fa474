//! Optimisation loop, learning-rate schedule, checkpoints and metrics.

pub mod checkpoint;
pub mod metrics;
pub mod optim;
pub mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, TrainState};
pub use metrics::{average_precision, mean_average_precision, top_k_accuracy, MapResult};
pub use optim::Adam;
pub use schedule::{lr_at, ScheduleKind};
pub use trainer::{
    evaluate, fit, read_metrics_log, write_report, EpochMetrics, EvalMetrics, EvalOutput, TrainRun, TrainSummary,
    FINAL_CHECKPOINT, METRICS_LOG,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub schedule: ScheduleKind,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
    /// Squash logits with a sigmoid before the Huber loss.
    pub sigmoid_before_loss: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Write a checkpoint every this many epochs (the final epoch is always
    /// written); 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
    pub top_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr_start: 2e-4,
            lr_end: 1e-6,
            schedule: ScheduleKind::Cosine,
            batch_size: 8,
            eval_batch_size: 32,
            seed: 0,
            huber_delta: 1.0,
            sigmoid_before_loss: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 10,
            grad_clip: None,
            top_k: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |s: &str| format!("train.{s}");
        if self.epochs == 0 {
            return Err(Error::validation(f("epochs"), "must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::validation(f("lr_start"), "need lr_start >= lr_end > 0"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::validation(f("batch_size"), "must be at least 1"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::validation(f("huber_delta"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation(f("beta1"), "betas must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation(f("eps"), "must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::validation(f("grad_clip"), "must be positive"));
        }
        if self.top_k == 0 {
            return Err(Error::validation(f("top_k"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        lr_at(self.schedule, self.lr_start, self.lr_end, epoch, self.epochs)
    }
}

/// Mix `parts` into `seed` with splitmix64 steps.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
