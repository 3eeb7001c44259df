//! Closed-loop comparison of the proposed controller against the linear
//! and unconstrained baselines over ten paired-noise seeds.
//!
//! Usage: `cargo run --release --example compare_controllers -- [out_dir]`

use std::path::PathBuf;

use lrmpc::harness::commands::format_summary;
use lrmpc::harness::{compare, ExperimentConfig};

fn main() -> lrmpc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/compare".into());
    let cfg = ExperimentConfig::default();
    let report = compare(&cfg, &out)?;
    print!("{}", format_summary(&report.summary));

    let first = &report.traces[0];
    println!("\n{} seed {}:", first.controller.label(), first.seed);
    for (t, x) in first.states.iter().enumerate() {
        let u = first.inputs.get(t).map_or(String::new(), |u| format!("u={:+.3}", u[0]));
        let ev = first.event_at(t).map_or("", |e| e.as_str());
        println!("  t={t} x={:+.3} {u} {ev}", x[0]);
    }
    println!("outputs in {}", out.display());
    Ok(())
}
