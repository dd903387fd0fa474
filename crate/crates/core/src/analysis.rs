//! Inspection of trained models: routing profiles and their distances,
//! learned filter shapes, and metric curves across runs.

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::signal::Dataset;
use crate::tensor::Tensor;
use crate::train::EpochMetrics;

/// Router weights for every patch of one source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRouting {
    pub clip_id: String,
    /// Indices of the clip's true classes.
    pub labels: Vec<usize>,
    /// `patches × N_F`
    pub weights: Tensor<f64>,
}

impl ClipRouting {
    pub fn mean_weights(&self) -> Vec<f64> {
        column_means(self.weights.rows(), self.weights.last_dim())
    }
}

fn column_means<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut count = 0usize;
    for row in rows {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Run the router over every patch of `data`, grouping chunks of the same
/// source clip.
pub fn route_dataset(
    model: &Model,
    params: &ParamStore<f32>,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<ClipRouting>> {
    let kind = model.frontend.config.kind;
    if model.frontend.router().is_none() {
        return Err(Error::UnsupportedAnalysis(format!("{kind:?} front end has no router")));
    }
    let nf = model.frontend.config.n_filterbanks;
    let mut per_unit: Vec<Vec<f64>> = vec![Vec::new(); data.len()];
    for batch in data.sequential_batches(batch_size)? {
        let g = Graph::new();
        let vars = params.bind_frozen(&g);
        let r = model
            .frontend
            .route(&vars, g.constant(batch.patches.clone()))?
            .expect("router present");
        let t = r.weights.shape()[1];
        for (b, &idx) in batch.indices.iter().enumerate() {
            per_unit[idx] = r.weights.data()[b * t * nf..(b + 1) * t * nf].to_vec();
        }
    }
    data.source_groups()
        .into_iter()
        .map(|(clip_id, members)| {
            let item = &data.items[members[0]];
            let labels = item
                .label
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.5)
                .map(|(j, _)| j)
                .collect();
            let flat: Vec<f64> = members.iter().flat_map(|&i| per_unit[i].iter().copied()).collect();
            Ok(ClipRouting {
                clip_id,
                labels,
                weights: Tensor::new(&[flat.len() / nf, nf], flat)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingProfile {
    pub class: String,
    pub mean_weights: Vec<f64>,
    pub n_patches: usize,
}

/// Per-class mean of the router weights over all patches of all clips
/// carrying that class. Classes with no clips are omitted.
pub fn routing_profiles(routings: &[ClipRouting], classes: &[String]) -> Vec<RoutingProfile> {
    classes
        .iter()
        .enumerate()
        .filter_map(|(j, class)| {
            let clips: Vec<&ClipRouting> = routings.iter().filter(|r| r.labels.contains(&j)).collect();
            let n_patches: usize = clips.iter().map(|r| r.weights.shape()[0]).sum();
            if n_patches == 0 {
                return None;
            }
            let nf = clips[0].weights.last_dim();
            Some(RoutingProfile {
                class: class.clone(),
                mean_weights: column_means(clips.iter().flat_map(|r| r.weights.rows()), nf),
                n_patches,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pairwise Euclidean distances between labelled vectors.
pub fn distance_matrix(labels: Vec<String>, vectors: &[Vec<f64>]) -> Result<DistanceMatrix> {
    if vectors.len() < 2 || labels.len() != vectors.len() {
        return Err(Error::validation(
            "profiles",
            format!(
                "need at least 2 labelled vectors, got {} vectors and {} labels",
                vectors.len(),
                labels.len()
            ),
        ));
    }
    let n = vectors.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&vectors[i], &vectors[j]);
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    Ok(DistanceMatrix { labels, values })
}

pub fn profile_distances(profiles: &[RoutingProfile]) -> Result<DistanceMatrix> {
    let vectors: Vec<Vec<f64>> = profiles.iter().map(|p| p.mean_weights.clone()).collect();
    distance_matrix(profiles.iter().map(|p| p.class.clone()).collect(), &vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Mean distance between vectors in the same group.
    pub intra: f64,
    /// Mean distance between vectors in different groups.
    pub inter: f64,
}

impl Separation {
    pub fn separated(&self) -> bool {
        self.inter > self.intra
    }
}

/// Mean pairwise distances within and across `groups`.
pub fn cluster_separation(vectors: &[Vec<f64>], groups: &[usize]) -> Result<Separation> {
    if vectors.len() != groups.len() {
        return Err(Error::shape("cluster_separation", &[vectors.len()], &[groups.len()]));
    }
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d = euclidean(&vectors[i], &vectors[j]);
            if groups[i] == groups[j] {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 {
        return Err(Error::validation("groups", "need pairs both within and across groups"));
    }
    Ok(Separation {
        intra: intra / ni as f64,
        inter: inter / nx as f64,
    })
}

/// Impulse responses of one bank and their magnitude spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterExport {
    pub bank: usize,
    /// `filters × K`
    pub taps: Vec<Vec<f32>>,
    /// `filters × (K/2 + 1)`, DFT magnitudes at bins `0..=K/2`.
    pub spectra: Vec<Vec<f64>>,
}

pub fn export_filters(model: &Model, params: &ParamStore<f32>, bank: usize) -> Result<FilterExport> {
    let banks = model
        .frontend
        .filter_banks()
        .ok_or_else(|| Error::UnsupportedAnalysis("only bank-of-filterbanks models have filters".into()))?;
    let b = banks.banks.get(bank).ok_or_else(|| {
        Error::validation(
            "bank",
            format!("index {bank} out of range (model has {})", banks.banks.len()),
        )
    })?;
    let kernels = params.get(b.kernels);
    let k = kernels.last_dim();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(k);
    let mut taps = Vec::new();
    let mut spectra = Vec::new();
    for row in kernels.rows() {
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        fft.process(&mut buf);
        spectra.push(buf[..=k / 2].iter().map(|c| c.norm()).collect());
        taps.push(row.to_vec());
    }
    Ok(FilterExport { bank, taps, spectra })
}

impl FilterExport {
    /// Write `(filter, tap, value)` and `(filter, bin, magnitude)` CSVs.
    pub fn write_csv(&self, time_path: &Path, spectrum_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(time_path)?;
        w.write_record(["filter", "tap", "value"])?;
        for (f, row) in self.taps.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                w.write_record([f.to_string(), t.to_string(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(time_path, e))?;
        let mut w = csv::Writer::from_path(spectrum_path)?;
        w.write_record(["filter", "bin", "magnitude"])?;
        for (f, row) in self.spectra.iter().enumerate() {
            for (bin, v) in row.iter().enumerate() {
                w.write_record([f.to_string(), bin.to_string(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(spectrum_path, e))?;
        Ok(())
    }
}

/// Metric columns available to [`compare_runs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurveMetric {
    #[default]
    TopKPatch,
    Map,
    ClipAccuracy,
    ValidLoss,
    TrainLoss,
    Lr,
}

impl CurveMetric {
    pub fn value(self, m: &EpochMetrics) -> Option<f64> {
        match self {
            CurveMetric::TrainLoss => Some(m.train_loss),
            CurveMetric::Lr => Some(m.lr),
            CurveMetric::TopKPatch => m.valid.as_ref().map(|v| v.top_k_patch),
            CurveMetric::Map => m.valid.as_ref().map(|v| v.map),
            CurveMetric::ClipAccuracy => m.valid.as_ref().map(|v| v.clip_accuracy),
            CurveMetric::ValidLoss => m.valid.as_ref().map(|v| v.loss),
        }
    }
}

/// Epoch-aligned table: `epoch` plus one column per run.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub columns: Vec<String>,
    pub epochs: Vec<usize>,
    /// `epochs × runs`; `None` where the run logged no validation metrics.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Join metric logs on epoch. Each log is sorted by epoch first; all logs
/// must cover the same epochs.
pub fn compare_runs(logs: &[Vec<EpochMetrics>], metric: CurveMetric) -> Result<CurveTable> {
    if logs.is_empty() {
        return Err(Error::validation("logs", "need at least one metrics log"));
    }
    let sorted: Vec<Vec<&EpochMetrics>> = logs
        .iter()
        .map(|l| {
            let mut v: Vec<&EpochMetrics> = l.iter().collect();
            v.sort_by_key(|m| m.epoch);
            v
        })
        .collect();
    let lengths: Vec<usize> = sorted.iter().map(Vec::len).collect();
    let epochs: Vec<usize> = sorted[0].iter().map(|m| m.epoch).collect();
    if lengths.iter().any(|&n| n != lengths[0])
        || sorted
            .iter()
            .any(|l| l.iter().map(|m| m.epoch).ne(epochs.iter().copied()))
    {
        return Err(Error::Alignment(lengths));
    }
    let mut columns = vec!["epoch".to_string()];
    for (i, l) in sorted.iter().enumerate() {
        let label = l.first().map(|m| m.run_label.clone()).unwrap_or_default();
        let label = if columns.contains(&label) {
            format!("{label}#{i}")
        } else {
            label
        };
        columns.push(label);
    }
    let values = (0..epochs.len())
        .map(|r| sorted.iter().map(|l| metric.value(l[r])).collect())
        .collect();
    Ok(CurveTable {
        columns,
        epochs,
        values,
    })
}

impl CurveTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for (e, row) in self.epochs.iter().zip(&self.values) {
            let mut rec = vec![e.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Write per-class profiles, per-patch weights, the class distance matrix
/// and a JSON summary, with names prefixed by `stem`. Returns the paths.
pub fn write_routing(
    dir: &Path,
    stem: &str,
    split: &str,
    classes: &[String],
    routings: &[ClipRouting],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let profiles = routing_profiles(routings, classes);
    let nf = routings.first().map(|r| r.weights.last_dim()).unwrap_or(0);

    let profile_path = dir.join(format!("{stem}-routing-profiles.csv"));
    let mut w = csv::Writer::from_path(&profile_path)?;
    let mut header = vec!["class".to_string(), "n_patches".to_string()];
    header.extend((0..nf).map(|i| format!("w{i}")));
    w.write_record(&header)?;
    for p in &profiles {
        let mut rec = vec![p.class.clone(), p.n_patches.to_string()];
        rec.extend(p.mean_weights.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&profile_path, e))?;

    let patch_path = dir.join(format!("{stem}-routing-patches.csv"));
    let mut w = csv::Writer::from_path(&patch_path)?;
    let mut header = vec!["clip".to_string(), "labels".to_string(), "patch".to_string()];
    header.extend((0..nf).map(|i| format!("w{i}")));
    w.write_record(&header)?;
    for r in routings {
        let labels = r
            .labels
            .iter()
            .map(|&j| classes[j].as_str())
            .collect::<Vec<_>>()
            .join(";");
        for (p, row) in r.weights.rows().enumerate() {
            let mut rec = vec![r.clip_id.clone(), labels.clone(), p.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&patch_path, e))?;

    let mut paths = vec![profile_path, patch_path];
    let distances = if profiles.len() >= 2 {
        let m = profile_distances(&profiles)?;
        paths.push(write_distance_csv(dir, stem, &m)?);
        Some(m)
    } else {
        None
    };
    let summary = serde_json::json!({
        "analysis": "routing",
        "split": split,
        "n_clips": routings.len(),
        "profiles": profiles,
        "distance": distances,
    });
    let summary_path = dir.join(format!("{stem}-routing-summary.json"));
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(|e| Error::io(&summary_path, e))?;
    paths.push(summary_path);
    Ok(paths)
}

pub fn write_distance_csv(dir: &Path, stem: &str, m: &DistanceMatrix) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}-distance.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![String::new()];
    header.extend(m.labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in m.labels.iter().zip(&m.values) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
