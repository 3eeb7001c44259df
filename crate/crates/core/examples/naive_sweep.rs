//! Fixed-tolerance regions at tol = 0.1 .. 1.0 next to the proposed controller.
//!
//! Usage: `cargo run --release --example naive_sweep -- [out_dir]`

use std::path::PathBuf;

use lrmpc::harness::commands::format_summary;
use lrmpc::harness::{sweep_naive, ExperimentConfig};

fn main() -> lrmpc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/sweep".into());
    let report = sweep_naive(&ExperimentConfig::default(), &out)?;
    print!("{}", format_summary(&report.compare.summary));
    if let Some(r) = report.cost_ratio {
        println!("naive(0.1) mean cost / proposed mean cost = {r:.3}");
    }
    Ok(())
}
