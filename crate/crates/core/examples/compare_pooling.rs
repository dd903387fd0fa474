//! Train the desk model with max and with average pooling and join their
//! curves into one table.
//!
//! cargo run --release --example compare_pooling -- [epochs]

use adaf::analysis::{compare_runs, CurveMetric};
use adaf::config::{DataConfig, RunConfig};
use adaf::frontend::Pooling;
use adaf::signal::SynthSpec;
use adaf::train::{fit, TrainRun};

fn main() -> adaf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut logs = Vec::new();
    for (pooling, name) in [(Pooling::Max, "max"), (Pooling::Avg, "avg")] {
        let out = format!("target/example-runs/pooling-{name}");
        let mut cfg = RunConfig::desk(DataConfig::synthetic(SynthSpec::four_family(0)), out);
        cfg.frontend.pooling = pooling;
        cfg.train.epochs = epochs;
        let data = cfg.load_data(None)?;
        cfg.resolve(&data.train.classes)?;
        let summary = fit(TrainRun {
            model: cfg.model_config(),
            train: cfg.train.clone(),
            train_set: &data.train,
            valid_set: data.valid.as_ref(),
            out_dir: cfg.out_dir.clone(),
            resume: None,
        })?;
        logs.push(summary.history);
    }
    for metric in [CurveMetric::Map, CurveMetric::ValidLoss] {
        let table = compare_runs(&logs, metric)?;
        println!("{metric:?}\n{}", table.columns.join("\t"));
        for (epoch, row) in table.epochs.iter().zip(&table.values) {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|v| format!("{v:.4}")).unwrap_or_default())
                .collect();
            println!("{epoch}\t{}", cells.join("\t"));
        }
    }
    Ok(())
}
