//! Adaptive linearization regions along the initial straight-line guess.
//! Regions shrink where the drift bends, i.e. near the origin.

use lrmpc::control_loop::equally_spaced;
use lrmpc::harness::{Experiment, ExperimentConfig};
use lrmpc::linearizer::{linearize_trajectory, write_audit_csv};

fn main() -> lrmpc::Result<()> {
    let exp = Experiment::new(ExperimentConfig::default())?;
    let task = &exp.config.task;
    let points = equally_spaced(&task.x_start(), &task.x_goal(), task.initial_horizon);
    let lins = linearize_trajectory(&exp.training, &points, &exp.config.grid, &exp.config.kernel)?;
    println!("{:>6} {:>8} {:>8} {:>10} {:>6} {:>10}", "point", "slope", "offset", "half-width", "steps", "max_err");
    for l in &lins {
        println!(
            "{:>6.2} {:>8.4} {:>8.4} {:>10.3} {:>6} {:>10.2e}",
            l.point[0],
            l.fit.matrix[(0, 0)],
            l.fit.offset[0],
            l.region.radius()[0],
            l.steps_taken,
            l.max_error
        );
    }
    let near_zero = lins.iter().min_by(|a, b| a.point.amax().total_cmp(&b.point.amax())).expect("points");
    println!("\naudit of the region at {:.2}:", near_zero.point[0]);
    write_audit_csv(std::io::stdout(), &near_zero.audit[..near_zero.audit.len().min(6)])?;
    Ok(())
}
