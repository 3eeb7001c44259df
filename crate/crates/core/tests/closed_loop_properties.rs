use lrmpc::control_loop::{run_controller, ClosedLoopTrace, ControllerKind, EventKind};
use lrmpc::harness::commands::run_matrix;
use lrmpc::harness::config::{Experiment, ExperimentConfig, SystemSpec};
use lrmpc::linearizer::GridSpec;
use lrmpc::plant::NoiseSpec;
use lrmpc::set_algebra::BoxSet;

fn default_experiment() -> Experiment {
    Experiment::new(ExperimentConfig::default()).unwrap()
}

#[test]
fn proposed_constraint_satisfaction_over_many_seeds() {
    let exp = default_experiment();
    let seeds: Vec<u64> = (100..200).collect();
    let traces = run_matrix(&exp, &[ControllerKind::Proposed], &seeds).unwrap();
    let x_box = &exp.config.task.state_constraints;
    let u_box = &exp.config.task.input_constraints;
    let satisfied = traces
        .iter()
        .filter(|t| t.states.iter().all(|x| x_box.contains(x)) && t.inputs.iter().all(|u| u_box.contains(u)))
        .count();
    let rate = satisfied as f64 / traces.len() as f64;
    let bound = 0.95f64.powi(exp.config.task.duration as i32) - 0.05;
    println!("constraint satisfaction {satisfied}/{} vs bound {bound:.4}", traces.len());
    assert!(rate >= bound);

    for t in &traces {
        for w in t.horizons.windows(2) {
            assert!(w[1] == w[0] || w[1] + 1 == w[0], "horizons {:?}", t.horizons);
        }
    }
}

/// When the realized state lands in the first tube set around the plan, an
/// infeasible full problem must be rescued by the shrunk problem.
fn check_shifted_feasibility(tr: &ClosedLoopTrace) -> usize {
    let mut checked = 0;
    for t in 0..tr.inputs.len().saturating_sub(1) {
        let (Some(plan), Some(tube)) = (&tr.open_loop_plans[t], &tr.tubes[t]) else {
            continue;
        };
        if plan.len() < 3 || tr.feasible_flags[t + 1] {
            continue;
        }
        let dev = &tr.states[t + 1] - &plan[1];
        if tube.sets[1].contains(&dev) {
            checked += 1;
            assert_eq!(tr.event_at(t + 1), Some(EventKind::Fallback), "seed {} t {}", tr.seed, t + 1);
        }
    }
    checked
}

#[test]
fn shifted_plan_rescues_when_deviation_is_inside_the_tube() {
    let exp = default_experiment();
    let seeds: Vec<u64> = (0..30).collect();
    let traces = run_matrix(&exp, &[ControllerKind::Proposed], &seeds).unwrap();
    let checked: usize = traces.iter().map(check_shifted_feasibility).sum();
    println!("{checked} fallback steps checked");
}

#[test]
fn all_controllers_see_the_same_noise() {
    let exp = default_experiment();
    let kinds = [
        ControllerKind::Proposed,
        ControllerKind::Linear,
        ControllerKind::Unconstrained,
        ControllerKind::Naive { tol: 0.3 },
    ];
    let traces = run_matrix(&exp, &kinds, &[5]).unwrap();
    for t in &traces[1..] {
        assert_eq!(t.disturbances, traces[0].disturbances);
    }
}

#[test]
fn traces_follow_the_plant_and_sum_their_costs() {
    let exp = default_experiment();
    for kind in [ControllerKind::Proposed, ControllerKind::Linear, ControllerKind::Naive { tol: 0.1 }] {
        let tr = run_controller(kind, exp.scenario(), 2).unwrap();
        for t in 0..tr.inputs.len() {
            assert_eq!(tr.states[t + 1], exp.system.step_with(&tr.states[t], &tr.inputs[t], &tr.disturbances[t]));
        }
        let recomputed: f64 = (0..tr.inputs.len())
            .map(|t| {
                exp.settings
                    .weights
                    .stage_cost(&tr.states[t], &tr.inputs[t], &exp.config.task.x_goal(), &exp.config.task.u_goal())
            })
            .sum();
        assert!((recomputed - tr.cumulative_cost).abs() < 1e-9);
    }
}

#[test]
fn huge_tolerance_naive_matches_unconstrained() {
    let exp = default_experiment();
    for seed in [0, 3] {
        let a = run_controller(ControllerKind::Naive { tol: 1e6 }, exp.scenario(), seed).unwrap();
        let b = run_controller(ControllerKind::Unconstrained, exp.scenario(), seed).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x - y).amax() < 1e-9);
        }
    }
}

#[test]
fn linear_matches_proposed_on_an_exact_affine_plant() {
    let mut cfg = ExperimentConfig::default();
    cfg.system = SystemSpec::Affine {
        offset: vec![0.2],
        matrix: vec![vec![0.9]],
    };
    cfg.noise = NoiseSpec::disabled(1);
    cfg.task.state_constraints = BoxSet::from_slices(&[0.0], &[20.0]).unwrap();
    cfg.task.input_constraints = BoxSet::from_slices(&[0.0], &[20.0]).unwrap();
    cfg.kernel.ridge = 0.0;
    cfg.grid = GridSpec::new(0.25, 1e-7, 200);
    let exp = Experiment::new(cfg).unwrap();
    let a = run_controller(ControllerKind::Proposed, exp.scenario(), 0).unwrap();
    let b = run_controller(ControllerKind::Linear, exp.scenario(), 0).unwrap();
    assert_eq!(a.states.len(), b.states.len());
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!((x - y).amax() < 1e-4);
    }
    assert!(a.reached_goal);
}
