//! Finite-difference gradient checks for every primitive and front end.
//!
//! cargo run --release --example gradcheck -- [seeds]

use adaf::gradsuite::{format_table, run_suite};

fn main() -> adaf::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let rows = run_suite(seeds, 0)?;
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    Ok(())
}
