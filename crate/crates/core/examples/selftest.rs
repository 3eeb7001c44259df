//! Runs the property suites, including the faulty-erosion negative control.

use lrmpc::harness::selftest::{faulty_pontryagin, set_algebra_suite};
use lrmpc::harness::{run_selftest, ExperimentConfig};

fn main() -> lrmpc::Result<()> {
    let report = run_selftest(&ExperimentConfig::default(), None)?;
    for s in &report.suites {
        println!("{}", s.line());
    }
    let bad = set_algebra_suite(50, 0, faulty_pontryagin)?;
    println!("faulty erosion on its own: {}", bad.line());
    report.into_result().map(|_| ())
}
