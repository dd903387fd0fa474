//! Export one bank's impulse responses and magnitude spectra as CSV. Uses
//! a checkpoint when given, otherwise a freshly initialised desk model.
//!
//! cargo run --release --example export_filters -- [checkpoint] [bank]

use std::path::Path;

use adaf::analysis::export_filters;
use adaf::config::desk_model;
use adaf::model::Model;
use adaf::train::Checkpoint;

fn main() -> adaf::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next();
    let bank = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (model, params) = match &checkpoint {
        Some(path) => Checkpoint::load(path)?.model()?,
        None => Model::new::<f32>(&desk_model_with_classes(), 0)?,
    };
    let ex = export_filters(&model, &params, bank)?;
    let dir = Path::new("target/example-runs/filters");
    std::fs::create_dir_all(dir).map_err(|e| adaf::Error::io(dir, e))?;
    ex.write_csv(&dir.join("time.csv"), &dir.join("spectrum.csv"))?;
    for (i, spectrum) in ex.spectra.iter().enumerate() {
        let peak = spectrum
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let hz = peak as f64 * 16_000.0 / ex.taps[i].len() as f64;
        println!(
            "filter {i:>2}: {} taps, spectral peak at bin {peak} (~{hz:.0} Hz)",
            ex.taps[i].len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn desk_model_with_classes() -> adaf::model::ModelConfig {
    let mut cfg = desk_model();
    cfg.backbone.n_classes = 4;
    cfg
}
