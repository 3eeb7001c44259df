//! Error tube along a nominal trajectory, the tightened constraint sets it
//! induces, and a Monte Carlo check of its containment rate.

use lrmpc::error_tube::{propagate_tube, tighten_constraints, write_tube_csv};
use lrmpc::harness::selftest::tube_containment;
use lrmpc::harness::{Experiment, ExperimentConfig};
use lrmpc::linearizer::{models_along, ModelSettings};
use nalgebra::DVector;

fn main() -> lrmpc::Result<()> {
    let exp = Experiment::new(ExperimentConfig::default())?;
    let s = &exp.settings;
    let ms = ModelSettings {
        kernel: s.kernel,
        grid: s.grid,
        alpha: s.alpha,
        resamples: &exp.resamples,
        center_estimation_band: s.center_estimation_band,
    };
    let points: Vec<DVector<f64>> = [4.0, 1.6, 1.2, -0.6, -0.85, -0.95]
        .iter()
        .map(|x| DVector::from_element(1, *x))
        .collect();
    let (_, models) = models_along(&exp.training, &points, &exp.system.input_matrix, &ms)?;
    let tube = propagate_tube(&models, &exp.system.noise.disturbance_box(), s.alpha)?;
    write_tube_csv(std::io::stdout(), &tube)?;

    let regions: Vec<_> = models.iter().map(|m| m.region.clone()).collect();
    let tight = tighten_constraints(&regions, &exp.config.task.goal_set, &tube)?;
    for (k, (r, t)) in regions.iter().zip(&tight.regions).enumerate() {
        println!("k={k}: region radius {:.3} -> tightened {}", r.radius()[0], fmt(t));
    }
    println!("goal set tightened to {}", fmt(&tight.terminal));

    let x0 = DVector::from_element(1, 4.0);
    let inputs = vec![DVector::zeros(1); 6];
    let report = tube_containment(&exp, &x0, &inputs, 2000, 1)?;
    for st in &report.steps {
        println!("k={}: contained {:.4} (bound {:.4})", st.k, st.fraction, st.bound);
    }
    Ok(())
}

fn fmt(b: &lrmpc::set_algebra::BoxSet) -> String {
    if b.is_empty() {
        "empty".into()
    } else {
        format!("[{:.3}, {:.3}]", b.lower()[0], b.upper()[0])
    }
}
