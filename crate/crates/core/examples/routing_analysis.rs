//! Train briefly on two tonal and two noise families, then look at how the
//! router distributes patches: per-class profiles, their distance matrix
//! and the separation between the tonal and noise groups.
//!
//! cargo run --release --example routing_analysis -- [epochs] [seed]

use adaf::analysis::{cluster_separation, profile_distances, route_dataset, routing_profiles};
use adaf::config::{DataConfig, RunConfig};
use adaf::signal::SynthSpec;
use adaf::train::{fit, TrainRun};

fn main() -> adaf::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(15);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = SynthSpec::two_superfamilies(seed, 40);
    let tonal: Vec<bool> = spec.families.iter().map(|f| f.kind.is_tonal()).collect();
    let mut cfg = RunConfig::desk(DataConfig::synthetic(spec), "target/example-runs/routing");
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    cfg.train.checkpoint_every = 0;
    let data = cfg.load_data(None)?;
    cfg.resolve(&data.train.classes)?;
    let valid = data.valid.as_ref().expect("valid split");
    let summary = fit(TrainRun {
        model: cfg.model_config(),
        train: cfg.train.clone(),
        train_set: &data.train,
        valid_set: Some(valid),
        out_dir: cfg.out_dir.clone(),
        resume: None,
    })?;

    let routings = route_dataset(&summary.model, &summary.params, valid, 32)?;
    let profiles = routing_profiles(&routings, &valid.classes);
    for p in &profiles {
        let w: Vec<String> = p.mean_weights.iter().map(|v| format!("{v:.3}")).collect();
        println!("{:<11} [{}]  {} patches", p.class, w.join(", "), p.n_patches);
    }
    let m = profile_distances(&profiles)?;
    println!("\ndistance matrix");
    for (label, row) in m.labels.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("{label:<11} {}", cells.join("  "));
    }
    let vectors: Vec<Vec<f64>> = routings.iter().map(|r| r.mean_weights()).collect();
    let groups: Vec<usize> = routings.iter().map(|r| usize::from(tonal[r.labels[0]])).collect();
    let s = cluster_separation(&vectors, &groups)?;
    println!(
        "\nper-clip distance: within group {:.3}, across groups {:.3}",
        s.intra, s.inter
    );
    Ok(())
}
