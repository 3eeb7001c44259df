//! Local linear estimate of the cube-root drift with bootstrap bands,
//! written as CSV and SVG.
//!
//! Usage: `cargo run --release --example estimate_dynamics -- [out_dir]`

use std::path::PathBuf;

use lrmpc::harness::{estimate, ExperimentConfig};

fn main() -> lrmpc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/estimate".into());
    let cfg = ExperimentConfig::default();
    let report = estimate(&cfg, None, &out)?;
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "x", "f", "f_hat", "lower", "upper");
    for (b, f) in report.bands.iter().zip(&report.truth).step_by(6) {
        println!(
            "{:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            b.query[0], f[0], b.estimate[0], b.lower[0], b.upper[0]
        );
    }
    println!("widest band {:.4}, truth outside band by at most {:.4}", report.max_width(), report.max_truth_excess());
    println!("wrote {} and {}", report.csv_path.display(), report.svg_path.display());
    Ok(())
}
