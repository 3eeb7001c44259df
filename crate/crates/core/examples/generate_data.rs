//! Collects the offline cube-root dataset and writes it with a manifest.
//!
//! Usage: `cargo run --example generate_data -- [out_dir]`

use std::path::PathBuf;

use lrmpc::harness::{generate_data, ExperimentConfig};

fn main() -> lrmpc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/data".into());
    let cfg = ExperimentConfig::default();
    let report = generate_data(&cfg, &out)?;
    println!("{} transitions -> {}", report.records, report.dataset_path.display());

    let text = std::fs::read_to_string(&report.dataset_path).map_err(|e| lrmpc::Error::io(&report.dataset_path, e))?;
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
