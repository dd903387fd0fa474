//! Generate the four-family synthetic dataset as WAV files plus manifests.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [seed]

use adaf::signal::{generate_synthetic, DatasetManifest, SynthSpec};

fn main() -> adaf::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/example-data/four-family".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SynthSpec::four_family(seed);
    let written = generate_synthetic(&spec, &out)?;
    for path in [Some(&written.train), written.valid.as_ref(), written.test.as_ref()]
        .into_iter()
        .flatten()
    {
        let m = DatasetManifest::load(path)?;
        println!("{:<5} {:>4} clips  {}", m.split.name(), m.entries.len(), path.display());
    }
    Ok(())
}
