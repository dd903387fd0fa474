//! Train the desk-scale bank-of-filterbanks model on the four-family set
//! and report test metrics.
//!
//! cargo run --release --example train_desk -- [epochs] [out_dir]

use adaf::config::{DataConfig, RunConfig};
use adaf::signal::SynthSpec;
use adaf::train::{evaluate, fit, TrainRun};

fn main() -> adaf::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = args.next().unwrap_or_else(|| "target/example-runs/desk".into());

    let mut cfg = RunConfig::desk(DataConfig::synthetic(SynthSpec::four_family(0)), out);
    cfg.train.epochs = epochs;
    cfg.validate()?;
    let data = cfg.load_data(None)?;
    cfg.resolve(&data.train.classes)?;
    cfg.write_resolved(&cfg.out_dir)?;

    let summary = fit(TrainRun {
        model: cfg.model_config(),
        train: cfg.train.clone(),
        train_set: &data.train,
        valid_set: data.valid.as_ref(),
        out_dir: cfg.out_dir.clone(),
        resume: None,
    })?;
    for m in &summary.history {
        let v = m.valid.as_ref().expect("valid split");
        println!(
            "epoch {:>3}  lr {:.2e}  train loss {:.4}  valid map {:.4}  clip acc {:.4}",
            m.epoch, m.lr, m.train_loss, v.map, v.clip_accuracy
        );
    }
    if let Some(test) = &data.test {
        let m = evaluate(&summary.model, &summary.params, test, &cfg.train)?.metrics;
        println!(
            "test map {:.4}  clip accuracy {:.4}  top-{} patch {:.4}",
            m.map, m.clip_accuracy, m.k, m.top_k_patch
        );
    }
    println!("checkpoint: {}", summary.final_checkpoint.display());
    Ok(())
}
