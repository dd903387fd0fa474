//! Command-line interface. Each subcommand is a thin wrapper over the
//! library; [`run`] returns the error that `main` prints on one line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    compare_runs, export_filters, profile_distances, route_dataset, routing_profiles, write_distance_csv,
    write_routing, CurveMetric,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradsuite::{format_table, run_suite};
use crate::signal::{generate_synthetic, Dataset, LoadOptions, Split, SynthSpec};
use crate::train::{evaluate, fit, read_metrics_log, write_report, Checkpoint, TrainRun};

#[derive(Debug, Parser)]
#[command(name = "adaf", version, about = "Learnable raw-waveform audio front ends")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (WAV clips and per-split manifests).
    Synth(SynthArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Export routing profiles, distance matrices or learned filters.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks over every primitive and front end.
    Gradcheck(GradcheckArgs),
    /// Join metric logs from several runs into one curve table.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    FourFamily,
    TwoSuperfamilies,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis spec (JSON); defaults to the chosen preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "four-family", conflicts_with = "config")]
    pub preset: Preset,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split name recorded in the report (defaults to the manifest's).
    #[arg(long)]
    pub split: Option<Split>,
    /// Report directory (defaults to `eval-<split>` beside the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Routing,
    Filters,
    Distance,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clips to analyse (routing and distance).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub which: Which,
    /// Split name recorded in the output (defaults to the manifest's).
    #[arg(long)]
    pub split: Option<Split>,
    /// Bank to export (filters); all banks when omitted.
    #[arg(long)]
    pub bank: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted seeds per check.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Also write the table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    TopKPatch,
    Map,
    ClipAccuracy,
    ValidLoss,
    TrainLoss,
    Lr,
}

impl From<MetricArg> for CurveMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::TopKPatch => CurveMetric::TopKPatch,
            MetricArg::Map => CurveMetric::Map,
            MetricArg::ClipAccuracy => CurveMetric::ClipAccuracy,
            MetricArg::ValidLoss => CurveMetric::ValidLoss,
            MetricArg::TrainLoss => CurveMetric::TrainLoss,
            MetricArg::Lr => CurveMetric::Lr,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `metrics.ndjson` files, or run directories containing one.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "top-k-patch")]
    pub metric: MetricArg,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (including the program name) and run the subcommand.
/// Returns the lines to print on success.
pub fn run<I, T>(args: I) -> std::result::Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    dispatch(cli.command).map_err(CliError::Run)
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, or a request for help/version text.
    Usage(clap::Error),
    Run(Error),
}

impl CliError {
    /// The single line printed to stderr.
    pub fn line(&self) -> String {
        match self {
            CliError::Usage(e) => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
                format!("error: usage: {first}")
            }
            CliError::Run(e) => format!("error: {}: {}", e.kind(), e.to_string().replace('\n', " ")),
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let mut spec = match &a.config {
        Some(p) => read_json::<SynthSpec>(p)?,
        None => match a.preset {
            Preset::FourFamily => SynthSpec::four_family(0),
            Preset::TwoSuperfamilies => SynthSpec::two_superfamilies(0, 200),
        },
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let out = generate_synthetic(&spec, &a.out)?;
    let mut lines = format!("train manifest: {}\n", out.train.display());
    for (name, p) in [("valid", &out.valid), ("test", &out.test)] {
        if let Some(p) = p {
            lines += &format!("{name} manifest: {}\n", p.display());
        }
    }
    Ok(lines)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let data_dir = cfg.out_dir.join("data");
    let data = cfg.load_data(cfg.data.synth.is_some().then_some(data_dir.as_path()))?;
    cfg.resolve(&data.train.classes)?;
    cfg.write_resolved(&cfg.out_dir)?;
    let summary = fit(TrainRun {
        model: cfg.model_config(),
        train: cfg.train.clone(),
        train_set: &data.train,
        valid_set: data.valid.as_ref(),
        out_dir: cfg.out_dir.clone(),
        resume: a.checkpoint.clone(),
    })?;
    let mut lines = format!("checkpoint: {}\n", summary.final_checkpoint.display());
    if let Some(m) = summary.history.last().and_then(|h| h.valid.as_ref()) {
        lines += &format!(
            "valid: map {:.4} clip_accuracy {:.4} top{}_patch {:.4}\n",
            m.map, m.clip_accuracy, m.k, m.top_k_patch
        );
    }
    if let Some(test) = &data.test {
        let out = evaluate(&summary.model, &summary.params, test, &cfg.train)?;
        write_report(&cfg.out_dir.join("report-test"), &out.metrics, &test.classes)?;
        let m = &out.metrics;
        lines += &format!(
            "test: map {:.4} clip_accuracy {:.4} top{}_patch {:.4}\n",
            m.map, m.clip_accuracy, m.k, m.top_k_patch
        );
    }
    Ok(lines)
}

fn load_for_checkpoint(ck: &Checkpoint, manifest: &Path) -> Result<Dataset> {
    let options = LoadOptions {
        patch_length: ck.meta.model.frontend.patch_length,
        chunk_seconds: ck.meta.chunk_seconds,
    };
    let data = Dataset::load(manifest, options)?;
    if data.classes != ck.meta.classes {
        return Err(Error::validation(
            "manifest.classes",
            format!("{:?} differ from the checkpoint's {:?}", data.classes, ck.meta.classes),
        ));
    }
    Ok(data)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, params) = ck.model()?;
    let mut data = load_for_checkpoint(&ck, &a.manifest)?;
    if let Some(s) = a.split {
        data.split = s;
    }
    let out = evaluate(&model, &params, &data, &ck.meta.train)?;
    let dir = a.out.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-{}", data.split.name()))
    });
    write_report(&dir, &out.metrics, &data.classes)?;
    let m = &out.metrics;
    Ok(format!(
        "{}: map {:.4} clip_accuracy {:.4} top{}_patch {:.4}\nreport: {}\n",
        m.split,
        m.map,
        m.clip_accuracy,
        m.k,
        m.top_k_patch,
        dir.join("report.json").display()
    ))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, params) = ck.model()?;
    let stem = a
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut written = Vec::new();
    match a.which {
        Which::Filters => {
            let n = model.frontend.filter_banks().map(|b| b.banks.len()).ok_or_else(|| {
                Error::UnsupportedAnalysis(format!("{} front end has no filter banks", ck.meta.run_label))
            })?;
            let banks: Vec<usize> = match a.bank {
                Some(b) => vec![b],
                None => (0..n).collect(),
            };
            for b in banks {
                let ex = export_filters(&model, &params, b)?;
                let t = a.out.join(format!("{stem}-filters-bank{b}-time.csv"));
                let s = a.out.join(format!("{stem}-filters-bank{b}-spectrum.csv"));
                ex.write_csv(&t, &s)?;
                written.extend([t, s]);
            }
        }
        Which::Routing | Which::Distance => {
            if model.frontend.router().is_none() {
                return Err(Error::UnsupportedAnalysis(format!(
                    "{} front end has no router to analyse",
                    ck.meta.run_label
                )));
            }
            let manifest = a
                .manifest
                .as_ref()
                .ok_or_else(|| Error::validation("manifest", "required for routing and distance analyses"))?;
            let mut data = load_for_checkpoint(&ck, manifest)?;
            if let Some(s) = a.split {
                data.split = s;
            }
            let routings = route_dataset(&model, &params, &data, ck.meta.train.eval_batch_size)?;
            if a.which == Which::Routing {
                written = write_routing(&a.out, &stem, data.split.name(), &data.classes, &routings)?;
            } else {
                let m = profile_distances(&routing_profiles(&routings, &data.classes))?;
                written.push(write_distance_csv(&a.out, &stem, &m)?);
                let summary = serde_json::json!({
                    "analysis": "distance",
                    "split": data.split.name(),
                    "matrix": m,
                });
                let p = a.out.join(format!("{stem}-distance-summary.json"));
                std::fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&p, e))?;
                written.push(p);
            }
        }
    }
    Ok(written.iter().map(|p| format!("wrote {}\n", p.display())).collect())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let rows = run_suite(a.seeds, a.seed)?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)? + "\n").map_err(|e| Error::io(p, e))?;
    }
    let table = format_table(&rows);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::Contract(format!(
            "gradient checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(table)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<String> {
    let logs = a
        .logs
        .iter()
        .map(|p| {
            let p = if p.is_dir() {
                p.join(crate::train::METRICS_LOG)
            } else {
                p.clone()
            };
            read_metrics_log(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = compare_runs(&logs, a.metric.into())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    table.write_csv(&a.out)?;
    let mut lines = format!("wrote {} ({} epochs)\n", a.out.display(), table.epochs.len());
    if let Some(last) = table.values.last() {
        for (name, v) in table.columns[1..].iter().zip(last) {
            if let Some(v) = v {
                lines += &format!("final {name}: {v:.4}\n");
            }
        }
    }
    Ok(lines)
}
