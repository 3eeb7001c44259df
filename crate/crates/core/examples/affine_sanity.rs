//! On an exactly affine, noise-free plant the tubes collapse and the
//! proposed controller behaves like nominal MPC on the true model.

use lrmpc::control_loop::{run_controller, ControllerKind};
use lrmpc::harness::{Experiment, ExperimentConfig, SystemSpec};
use lrmpc::linearizer::GridSpec;
use lrmpc::plant::NoiseSpec;
use lrmpc::set_algebra::BoxSet;

fn main() -> lrmpc::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.system = SystemSpec::Affine {
        offset: vec![0.2],
        matrix: vec![vec![0.9]],
    };
    cfg.noise = NoiseSpec::disabled(1);
    cfg.task.state_constraints = BoxSet::from_slices(&[0.0], &[20.0])?;
    cfg.task.input_constraints = BoxSet::from_slices(&[0.0], &[20.0])?;
    cfg.kernel.ridge = 0.0;
    cfg.grid = GridSpec::new(0.25, 1e-7, 200);
    let exp = Experiment::new(cfg)?;

    let proposed = run_controller(ControllerKind::Proposed, exp.scenario(), 0)?;
    let linear = run_controller(ControllerKind::Linear, exp.scenario(), 0)?;
    for (t, (a, b)) in proposed.states.iter().zip(&linear.states).enumerate() {
        println!("t={t} proposed {:+.6} linear {:+.6}", a[0], b[0]);
    }
    let widest = proposed
        .tubes
        .iter()
        .flatten()
        .flat_map(|tube| tube.sets.iter().map(|s| s.radius()[0]))
        .fold(0.0, f64::max);
    println!("widest tube radius {widest:.2e}");
    Ok(())
}
