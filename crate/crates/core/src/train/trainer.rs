use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{huber_loss, Graph};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::signal::Dataset;
use crate::tensor::Tensor;
use crate::train::checkpoint::{Checkpoint, CheckpointMeta};
use crate::train::metrics::{argmax_accuracy, mean_average_precision, top_k_accuracy};
use crate::train::optim::Adam;
use crate::train::{derive_seed, TrainConfig};

pub const METRICS_LOG: &str = "metrics.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.adaf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub split: String,
    pub loss: f64,
    pub map: f64,
    pub top_k_patch: f64,
    pub k: usize,
    pub clip_accuracy: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub excluded_classes: Vec<String>,
    pub n_clips: usize,
    pub n_patches: usize,
}

/// One line of the metrics log. `epoch` is 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub run_label: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid: Option<EvalMetrics>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub metrics: EvalMetrics,
    /// Source clip ids in first-appearance order.
    pub clip_ids: Vec<String>,
    /// Mean token logits per source clip, `clips × C`.
    pub clip_scores: Tensor<f64>,
    pub clip_targets: Tensor<f64>,
}

/// Score every unit of `data`: clip scores are the mean token logits over
/// all chunks of the source clip, patch accuracy uses each token's logits.
pub fn evaluate(model: &Model, params: &ParamStore<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<EvalOutput> {
    let c = data.n_classes();
    if model.backbone.config.n_classes != c {
        return Err(Error::validation(
            "backbone.n_classes",
            format!("model has {} classes, data has {c}", model.backbone.config.n_classes),
        ));
    }
    let mut unit_scores = vec![Vec::new(); data.len()];
    let mut token_logits = Vec::new();
    let mut token_targets = Vec::new();
    let mut loss_sum = 0.0;
    for batch in data.sequential_batches(cfg.eval_batch_size)? {
        let g = Graph::new();
        let vars = params.bind_frozen(&g);
        let out = model.forward(&vars, g.constant(batch.patches.clone()), None)?;
        let pred = if cfg.sigmoid_before_loss {
            out.logits.sigmoid()
        } else {
            out.logits
        };
        let loss = huber_loss(pred, g.constant(batch.labels.clone()), cfg.huber_delta as f32)?;
        loss_sum += loss.value().data()[0] as f64 * batch.size() as f64;
        let tl = out.token_logits.value();
        let t = tl.shape()[1];
        for (b, &idx) in batch.indices.iter().enumerate() {
            let rows = &tl.data()[b * t * c..(b + 1) * t * c];
            let mut mean = vec![0.0f64; c];
            for row in rows.chunks(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v as f64;
                }
                token_logits.extend(row.iter().map(|&v| v as f64));
                token_targets.extend(batch.labels.row(b).iter().map(|&v| v as f64));
            }
            unit_scores[idx] = mean.iter().map(|m| m / t as f64).collect();
        }
    }

    let groups = data.source_groups();
    let mut scores = Vec::with_capacity(groups.len() * c);
    let mut targets = Vec::with_capacity(groups.len() * c);
    for (_, members) in &groups {
        for j in 0..c {
            scores.push(members.iter().map(|&i| unit_scores[i][j]).sum::<f64>() / members.len() as f64);
        }
        targets.extend(data.items[members[0]].label.iter().map(|&v| v as f64));
    }
    let n = groups.len();
    let clip_scores = Tensor::new(&[n, c], scores)?;
    let clip_targets = Tensor::new(&[n, c], targets)?;
    let map = mean_average_precision(&clip_scores, &clip_targets)?;
    let m = token_logits.len() / c;
    let token_logits = Tensor::new(&[m, c], token_logits)?;
    let token_targets = Tensor::new(&[m, c], token_targets)?;
    let k = cfg.top_k.min(c);
    let metrics = EvalMetrics {
        split: data.split.name().to_string(),
        loss: loss_sum / data.len() as f64,
        map: map.map,
        top_k_patch: top_k_accuracy(&token_logits, &token_targets, k)?,
        k,
        clip_accuracy: argmax_accuracy(&clip_scores, &clip_targets)?,
        per_class_ap: map.per_class,
        excluded_classes: map.excluded.iter().map(|&j| data.classes[j].clone()).collect(),
        n_clips: n,
        n_patches: m,
    };
    Ok(EvalOutput {
        metrics,
        clip_ids: groups.into_iter().map(|(id, _)| id).collect(),
        clip_scores,
        clip_targets,
    })
}

/// Write `report.json` and `per_class_ap.csv` into `dir`.
pub fn write_report(dir: &Path, metrics: &EvalMetrics, classes: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(metrics)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join("per_class_ap.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["class", "ap"])?;
    for (name, ap) in classes.iter().zip(&metrics.per_class_ap) {
        w.write_record([name.as_str(), &ap.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub struct TrainRun<'a> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_set: &'a Dataset,
    pub valid_set: Option<&'a Dataset>,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub history: Vec<EpochMetrics>,
    pub final_checkpoint: PathBuf,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch-{epoch:04}.adaf"))
}

/// Train per `run`, logging one [`EpochMetrics`] line per epoch and
/// writing checkpoints under `out_dir`.
pub fn fit(run: TrainRun<'_>) -> Result<TrainSummary> {
    let cfg = &run.train;
    cfg.validate()?;
    run.model.validate()?;
    if run.model.backbone.n_classes != run.train_set.n_classes() {
        return Err(Error::validation(
            "backbone.n_classes",
            format!(
                "{} does not match the {} classes in the data",
                run.model.backbone.n_classes,
                run.train_set.n_classes()
            ),
        ));
    }
    let out = &run.out_dir;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;

    let (model, fresh) = Model::new::<f32>(&run.model, cfg.seed)?;
    let meta = CheckpointMeta {
        model: model.config(),
        train: cfg.clone(),
        classes: run.train_set.classes.clone(),
        run_label: model.frontend.config.label(),
        chunk_seconds: run.train_set.options.chunk_seconds,
    };
    let log_path = out.join(METRICS_LOG);
    let (mut params, mut opt, start, mut history) = match &run.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.meta != meta {
                return Err(Error::validation(
                    "resume",
                    "checkpoint configuration differs from this run",
                ));
            }
            let state = ck.restore(fresh)?;
            let kept: Vec<EpochMetrics> = match read_metrics_log(&log_path) {
                Ok(h) => h.into_iter().filter(|m| m.epoch < state.epoch).collect(),
                Err(Error::Io { .. }) => Vec::new(),
                Err(e) => return Err(e),
            };
            let mut text = String::new();
            for m in &kept {
                text += &serde_json::to_string(m)?;
                text.push('\n');
            }
            fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
            (state.params, state.optimizer, state.epoch, kept)
        }
        None => {
            fs::write(&log_path, "").map_err(|e| Error::io(&log_path, e))?;
            let opt = Adam::new(fresh.tensors(), cfg.beta1, cfg.beta2, cfg.eps);
            (fresh, opt, 0, Vec::new())
        }
    };

    let mut final_path = out.join(FINAL_CHECKPOINT);
    for epoch in start..cfg.epochs {
        let lr = cfg.lr_at(epoch)?;
        let mut loss_sum = 0.0;
        for (bi, batch) in run
            .train_set
            .batches(cfg.batch_size, derive_seed(cfg.seed, &[epoch as u64]))?
            .enumerate()
        {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, bi as u64, 1]));
            let use_dropout = run.model.backbone.dropout > 0.0;
            let g = Graph::new();
            let vars = params.bind(&g);
            let out = model.forward(
                &vars,
                g.constant(batch.patches.clone()),
                use_dropout.then_some(&mut drop_rng),
            )?;
            let pred = if cfg.sigmoid_before_loss {
                out.logits.sigmoid()
            } else {
                out.logits
            };
            let loss = huber_loss(pred, g.constant(batch.labels.clone()), cfg.huber_delta as f32)?;
            let lv = loss.value().data()[0] as f64;
            g.backward(loss)?;
            let mut grads: Vec<Tensor<f32>> = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            let max_grad = grads.iter().map(|t| t.max_abs() as f64).fold(0.0, f64::max);
            if !lv.is_finite() || !max_grad.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    max_grad,
                });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads
                    .iter()
                    .flat_map(|t| t.data())
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > clip {
                    let s = (clip / norm) as f32;
                    for t in &mut grads {
                        *t = t.map(|v| v * s);
                    }
                }
            }
            opt.update(params.tensors_mut(), &grads, lr)?;
            loss_sum += lv * batch.size() as f64;
        }

        let valid = match run.valid_set {
            Some(v) => Some(evaluate(&model, &params, v, cfg)?.metrics),
            None => None,
        };
        let record = EpochMetrics {
            run_label: meta.run_label.clone(),
            epoch,
            lr,
            train_loss: loss_sum / run.train_set.len() as f64,
            valid,
        };
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&log_path, e))?;
        history.push(record);

        let done = epoch + 1;
        let last = done == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            let ck = Checkpoint::from_state(&params, &opt, done, cfg.seed, meta.clone());
            let path = checkpoint_path(out, done);
            ck.save(&path)?;
            if last {
                final_path = out.join(FINAL_CHECKPOINT);
                ck.save(&final_path)?;
            }
        }
    }
    if start >= cfg.epochs {
        Checkpoint::from_state(&params, &opt, start, cfg.seed, meta.clone()).save(&final_path)?;
    }
    if let (Some(v), Some(last)) = (run.valid_set, history.last()) {
        if let Some(m) = &last.valid {
            write_report(&out.join("report"), m, &v.classes)?;
        }
    }
    Ok(TrainSummary {
        model,
        params,
        history,
        final_checkpoint: final_path,
    })
}
