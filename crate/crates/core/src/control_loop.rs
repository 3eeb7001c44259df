//! Closed-loop runs of the robust controller and the three baselines.
//!
//! Every run pre-draws its disturbance sequence from the seed, so different
//! controllers driven with the same seed see identical noise.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_tube::{propagate_tube, tighten_constraints, ErrorTube};
use crate::estimator::{local_fit, KernelSpec, Resamples, TrainingSet};
use crate::linearizer::{
    linearize_trajectory, models_along, AffineModel, GridSpec, LinearizationResult, ModelSettings,
};
use crate::mpc::{build_ftocp, mpc_policy, solve_ftocp, CostWeights, FtocpSolution, InitialState};
use crate::plant::{disturbance_sequence, fmt_real, TaskSpec, TrueSystem};
use crate::set_algebra::BoxSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    Proposed,
    Linear,
    Unconstrained,
    Naive { tol: f64 },
}

impl ControllerKind {
    pub fn naive(tol: f64) -> Result<Self> {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::usage(format!("naive tolerance must be positive, got {tol}")));
        }
        Ok(ControllerKind::Naive { tol })
    }

    /// File-name friendly label such as `naive_0.3`.
    pub fn label(&self) -> String {
        match self {
            ControllerKind::Proposed => "proposed".into(),
            ControllerKind::Linear => "linear".into(),
            ControllerKind::Unconstrained => "unconstrained".into(),
            ControllerKind::Naive { tol } => format!("naive_{tol}"),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Estimation, linearization and cost settings shared by all controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSettings {
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub alpha: f64,
    pub center_estimation_band: bool,
    pub weights: CostWeights,
    /// Without a stored plan, retry infeasible problems on shorter horizons.
    pub shorten_initial_horizon: bool,
}

/// Everything a closed-loop run reads.
#[derive(Clone, Copy)]
pub struct Scenario<'a> {
    pub task: &'a TaskSpec,
    pub system: &'a TrueSystem,
    pub training: &'a TrainingSet,
    pub resamples: &'a Resamples,
    pub settings: &'a ControllerSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Full problem infeasible, shrunk problem on the stored sets solved.
    Fallback,
    /// Both problems infeasible; the stored plan's next input was applied.
    SafetyFallback,
    /// Infeasible at a step without any stored plan.
    NoPlan,
    /// Infeasible baseline step; the zero input was applied.
    ZeroInput,
    /// The horizon shrank to zero before reaching the goal.
    HorizonExhausted,
    /// No stored plan and the full horizon infeasible; a shorter one was solved.
    ShortenedHorizon,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Fallback => "fallback",
            EventKind::SafetyFallback => "safety_fallback",
            EventKind::NoPlan => "no_plan",
            EventKind::ZeroInput => "zero_input",
            EventKind::HorizonExhausted => "horizon_exhausted",
            EventKind::ShortenedHorizon => "shortened_horizon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepEvent {
    pub t: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub controller: ControllerKind,
    pub seed: u64,
    /// `x_0 ..` up to the last simulated state.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    /// Horizon used at each executed step.
    pub horizons: Vec<usize>,
    /// Whether the full problem was feasible at each step.
    pub feasible_flags: Vec<bool>,
    /// Planned nominal states of the problem that produced the input, if any.
    pub open_loop_plans: Vec<Option<Vec<DVector<f64>>>>,
    pub tubes: Vec<Option<ErrorTube>>,
    /// Linearizations computed at each step.
    pub linearizations: Vec<Vec<LinearizationResult>>,
    pub stage_costs: Vec<f64>,
    pub cumulative_cost: f64,
    pub reached_goal: bool,
    pub steps_to_goal: Option<usize>,
    pub events: Vec<StepEvent>,
}

impl ClosedLoopTrace {
    fn new(controller: ControllerKind, seed: u64, x0: DVector<f64>, disturbances: Vec<DVector<f64>>) -> Self {
        Self {
            controller,
            seed,
            states: vec![x0],
            inputs: Vec::new(),
            disturbances,
            horizons: Vec::new(),
            feasible_flags: Vec::new(),
            open_loop_plans: Vec::new(),
            tubes: Vec::new(),
            linearizations: Vec::new(),
            stage_costs: Vec::new(),
            cumulative_cost: 0.0,
            reached_goal: false,
            steps_to_goal: None,
            events: Vec::new(),
        }
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trace has an initial state")
    }

    pub fn event_at(&self, t: usize) -> Option<EventKind> {
        self.events.iter().find(|e| e.t == t).map(|e| e.kind)
    }

    pub fn count_events(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Writes `t, x_i.., u_i.., T_t, feasible, cost_so_far, event` rows; the
    /// last row holds the final state with empty input fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states[0].len();
        let m = self.inputs.first().map(|u| u.len()).unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        header.extend(["T_t", "feasible", "cost_so_far", "event"].map(String::from));
        w.write_record(&header)?;
        let mut so_far = 0.0;
        for t in 0..self.inputs.len() {
            so_far += self.stage_costs[t];
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| fmt_real(*v)));
            row.extend(self.inputs[t].iter().map(|v| fmt_real(*v)));
            row.push(self.horizons[t].to_string());
            row.push(self.feasible_flags[t].to_string());
            row.push(fmt_real(so_far));
            row.push(self.event_at(t).map(|e| e.as_str()).unwrap_or("").to_string());
            w.write_record(&row)?;
        }
        let t = self.inputs.len();
        let mut row = vec![t.to_string()];
        row.extend(self.final_state().iter().map(|v| fmt_real(*v)));
        row.extend((0..m).map(|_| String::new()));
        row.push(String::new());
        row.push(String::new());
        row.push(fmt_real(so_far));
        let tag = if self.reached_goal {
            "goal"
        } else {
            self.event_at(t).map(|e| e.as_str()).unwrap_or("end")
        };
        row.push(tag.to_string());
        w.write_record(&row)?;
        w.flush().map_err(|e| Error::io("trace csv", e))?;
        Ok(())
    }
}

/// Sets from the last problem that produced an input, indexed from its
/// solve time `t0`.
#[derive(Debug, Clone)]
struct StoredPlan {
    t0: usize,
    x_seq: Vec<DVector<f64>>,
    u_seq: Vec<DVector<f64>>,
    models: Vec<AffineModel>,
    /// Untightened state sets, one per model.
    regions: Vec<Option<BoxSet>>,
    tube: ErrorTube,
}

impl StoredPlan {
    fn horizon(&self) -> usize {
        self.models.len()
    }

    /// Linearization points for a problem of horizon `len` solved at `t`:
    /// the plan's states from `t` on, padded with its terminal state.
    fn shifted_points(&self, t: usize, len: usize) -> Vec<DVector<f64>> {
        let s = t - self.t0;
        let last = self.x_seq.last().expect("non-empty plan");
        (0..len)
            .map(|k| self.x_seq.get(s + k).unwrap_or(last).clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Regions {
    /// Adaptive regions with the estimation sets attached.
    Adaptive,
    /// Adaptive models, regions ignored.
    ModelsOnly,
    /// Boxes of fixed half-width around the linearization points.
    Fixed(f64),
    /// One model fitted at the current state for every step.
    SingleFit,
}

#[derive(Debug, Clone, Copy)]
struct Policy {
    regions: Regions,
    tighten: bool,
    shrinking_fallback: bool,
    /// Apply the stored plan's next input when every problem is infeasible
    /// (otherwise the zero input).
    shifted_safety_input: bool,
}

impl Policy {
    fn of(kind: ControllerKind) -> Self {
        match kind {
            ControllerKind::Proposed => Self {
                regions: Regions::Adaptive,
                tighten: true,
                shrinking_fallback: true,
                shifted_safety_input: true,
            },
            ControllerKind::Linear => Self {
                regions: Regions::SingleFit,
                tighten: false,
                shrinking_fallback: false,
                shifted_safety_input: false,
            },
            ControllerKind::Unconstrained => Self {
                regions: Regions::ModelsOnly,
                tighten: false,
                shrinking_fallback: false,
                shifted_safety_input: false,
            },
            ControllerKind::Naive { tol } => Self {
                regions: Regions::Fixed(tol),
                tighten: false,
                shrinking_fallback: true,
                shifted_safety_input: false,
            },
        }
    }
}

/// `count` equally spaced points from `from` to `to`, both included.
pub fn equally_spaced(from: &DVector<f64>, to: &DVector<f64>, count: usize) -> Vec<DVector<f64>> {
    if count == 1 {
        return vec![from.clone()];
    }
    (0..count)
        .map(|i| {
            let s = i as f64 / (count - 1) as f64;
            from + (to - from) * s
        })
        .collect()
}

struct StepProblem {
    models: Vec<AffineModel>,
    regions: Vec<Option<BoxSet>>,
    tube: ErrorTube,
    linearizations: Vec<LinearizationResult>,
}

struct Runner<'a> {
    sc: Scenario<'a>,
    policy: Policy,
    disturbance: BoxSet,
}

impl<'a> Runner<'a> {
    fn n(&self) -> usize {
        self.sc.task.x_start.len()
    }

    fn state_constraint(&self) -> Option<BoxSet> {
        Some(self.sc.task.state_constraints.clone())
    }

    /// Models, untightened state sets and tube for the given points.
    fn assemble(&self, x_t: &DVector<f64>, points: &[DVector<f64>]) -> Result<StepProblem> {
        let settings = self.sc.settings;
        let b = &self.sc.system.input_matrix;
        let x_box = &self.sc.task.state_constraints;
        let horizon = points.len();
        let (models, regions, linearizations) = match self.policy.regions {
            Regions::Adaptive => {
                let ms = ModelSettings {
                    kernel: settings.kernel,
                    grid: settings.grid,
                    alpha: settings.alpha,
                    resamples: self.sc.resamples,
                    center_estimation_band: settings.center_estimation_band,
                };
                let (lins, models) = models_along(self.sc.training, points, b, &ms)?;
                let regions = models
                    .iter()
                    .map(|m| m.region.intersection(x_box).map(Some))
                    .collect::<Result<_>>()?;
                (models, regions, lins)
            }
            Regions::ModelsOnly => {
                let lins = linearize_trajectory(self.sc.training, points, &settings.grid, &settings.kernel)?;
                let models = lins
                    .iter()
                    .map(|l| AffineModel::exact(l.fit.offset.clone(), l.fit.matrix.clone(), b.clone(), l.region.clone()))
                    .collect::<Result<_>>()?;
                (models, vec![self.state_constraint(); horizon], lins)
            }
            Regions::Fixed(tol) => {
                let mut models = Vec::with_capacity(horizon);
                let mut regions = Vec::with_capacity(horizon);
                for p in points {
                    let fit = local_fit(self.sc.training, p, &settings.kernel)?;
                    let region = BoxSet::new(p.clone(), DVector::from_element(self.n(), tol))?;
                    regions.push(Some(region.intersection(x_box)?));
                    models.push(AffineModel::exact(fit.offset, fit.matrix, b.clone(), region)?);
                }
                (models, regions, Vec::new())
            }
            Regions::SingleFit => {
                let fit = local_fit(self.sc.training, x_t, &settings.kernel)?;
                let unbounded = BoxSet::point(x_t.clone());
                let model = AffineModel::exact(fit.offset, fit.matrix, b.clone(), unbounded)?;
                (vec![model; horizon], vec![self.state_constraint(); horizon], Vec::new())
            }
        };
        let tube = if self.policy.tighten {
            propagate_tube(&models, &self.disturbance, settings.alpha)?
        } else {
            ErrorTube::zero(self.n(), horizon, settings.alpha)
        };
        Ok(StepProblem {
            models,
            regions,
            tube,
            linearizations,
        })
    }

    fn solve(
        &self,
        models: &[AffineModel],
        regions: &[Option<BoxSet>],
        tube: &ErrorTube,
        initial: InitialState,
    ) -> Result<FtocpSolution> {
        let task = self.sc.task;
        let horizon = models.len();
        let (state_sets, terminal) = if self.policy.tighten {
            let raw: Vec<BoxSet> = regions
                .iter()
                .map(|r| r.clone().expect("tightened controllers constrain every step"))
                .collect();
            let tight = tighten_constraints(&raw, &task.goal_set, tube)?;
            (tight.regions.into_iter().map(Some).collect(), tight.terminal)
        } else {
            (regions.to_vec(), task.goal_set.clone())
        };
        debug_assert_eq!(state_sets.len(), horizon);
        let p = build_ftocp(
            models.to_vec(),
            state_sets,
            terminal,
            task.input_constraints.clone(),
            initial,
            task.x_goal(),
            task.u_goal(),
            self.sc.settings.weights.clone(),
        )?;
        solve_ftocp(&p)
    }

    fn run(&self, kind: ControllerKind, seed: u64) -> Result<ClosedLoopTrace> {
        let task = self.sc.task;
        let sys = self.sc.system;
        let duration = task.duration;
        let ws = disturbance_sequence(&sys.noise, seed, duration);
        let mut trace = ClosedLoopTrace::new(kind, seed, task.x_start(), ws.clone());
        let x_goal = task.x_goal();
        let u_goal = task.u_goal();
        let m = task.u_goal.len();

        let mut horizon = task.initial_horizon;
        let mut stored: Option<StoredPlan> = None;

        for t in 0..duration {
            let x_t = trace.states[t].clone();
            if task.goal_set.contains(&x_t) {
                trace.reached_goal = true;
                trace.steps_to_goal = Some(t);
                break;
            }
            let len = horizon.min(duration - t);
            if len == 0 {
                trace.events.push(StepEvent {
                    t,
                    kind: EventKind::HorizonExhausted,
                });
                break;
            }

            let points = match (&stored, self.policy.regions) {
                (_, Regions::SingleFit) => vec![x_t.clone(); len],
                (Some(plan), _) => plan.shifted_points(t, len),
                (None, _) => equally_spaced(&x_t, &x_goal, len),
            };
            let mut step = self.assemble(&x_t, &points)?;
            let mut sol = self.solve(&step.models, &step.regions, &step.tube, InitialState::Fixed(x_t.clone()))?;
            let mut event = None;
            let mut used = len;
            if !sol.feasible
                && stored.is_none()
                && self.policy.shifted_safety_input
                && self.sc.settings.shorten_initial_horizon
            {
                for shorter in (1..len).rev() {
                    let points = equally_spaced(&x_t, &x_goal, shorter);
                    let candidate = self.assemble(&x_t, &points)?;
                    let s = self.solve(
                        &candidate.models,
                        &candidate.regions,
                        &candidate.tube,
                        InitialState::Fixed(x_t.clone()),
                    )?;
                    if s.feasible {
                        step = candidate;
                        sol = s;
                        used = shorter;
                        horizon = shorter;
                        event = Some(EventKind::ShortenedHorizon);
                        break;
                    }
                }
            }
            let len = used;
            trace.linearizations.push(step.linearizations.clone());
            trace.feasible_flags.push(sol.feasible);

            let mut plan_states = None;
            let mut plan_tube = None;
            let u = if sol.feasible {
                plan_states = Some(sol.x_seq.clone());
                plan_tube = Some(step.tube.clone());
                let u = mpc_policy(&sol)?;
                stored = Some(StoredPlan {
                    t0: t,
                    x_seq: sol.x_seq,
                    u_seq: sol.u_seq,
                    models: step.models,
                    regions: step.regions,
                    tube: step.tube,
                });
                u
            } else if let Some(plan) = stored.clone().filter(|_| self.policy.shrinking_fallback) {
                let s = t - plan.t0;
                let fb_len = (len - 1).min(plan.horizon().saturating_sub(s));
                horizon = horizon.saturating_sub(1);
                used = fb_len;
                let fallback = if fb_len >= 1 {
                    let mut tube = plan.tube.clone();
                    for _ in 0..s {
                        tube = tube.shifted()?;
                    }
                    tube.sets.truncate(fb_len + 1);
                    tube.components.truncate(fb_len);
                    let models = &plan.models[s..s + fb_len];
                    let regions = &plan.regions[s..s + fb_len];
                    let initial = InitialState::Within(BoxSet::point(x_t.clone()).minkowski_sum(&tube.sets[0])?);
                    let sol = self.solve(models, regions, &tube, initial)?;
                    sol.feasible.then(|| (sol, models.to_vec(), regions.to_vec(), tube))
                } else {
                    None
                };
                match fallback {
                    Some((sol, models, regions, tube)) => {
                        event = Some(EventKind::Fallback);
                        plan_states = Some(sol.x_seq.clone());
                        plan_tube = Some(tube.clone());
                        let u = mpc_policy(&sol)?;
                        stored = Some(StoredPlan {
                            t0: t,
                            x_seq: sol.x_seq,
                            u_seq: sol.u_seq,
                            models,
                            regions,
                            tube,
                        });
                        u
                    }
                    None if self.policy.shifted_safety_input => {
                        event = Some(EventKind::SafetyFallback);
                        plan.u_seq.get(s).cloned().unwrap_or_else(|| u_goal.clone())
                    }
                    None => {
                        event = Some(EventKind::ZeroInput);
                        DVector::zeros(m)
                    }
                }
            } else if self.policy.shifted_safety_input {
                event = Some(EventKind::NoPlan);
                u_goal.clone()
            } else {
                event = Some(EventKind::ZeroInput);
                DVector::zeros(m)
            };

            if let Some(kind) = event {
                trace.events.push(StepEvent { t, kind });
            }
            let cost = self.sc.settings.weights.stage_cost(&x_t, &u, &x_goal, &u_goal);
            trace.stage_costs.push(cost);
            trace.cumulative_cost += cost;
            trace.horizons.push(used);
            trace.open_loop_plans.push(plan_states);
            trace.tubes.push(plan_tube);
            let next = sys.step_with(&x_t, &u, &ws[t]);
            trace.inputs.push(u);
            trace.states.push(next);
        }
        if !trace.reached_goal && task.goal_set.contains(trace.final_state()) {
            trace.reached_goal = true;
            trace.steps_to_goal = Some(trace.states.len() - 1);
        }
        Ok(trace)
    }
}

/// Runs `kind` in closed loop against the true plant for one seed.
pub fn run_controller(kind: ControllerKind, sc: Scenario<'_>, seed: u64) -> Result<ClosedLoopTrace> {
    sc.task.validate()?;
    if let ControllerKind::Naive { tol } = kind {
        ControllerKind::naive(tol)?;
    }
    let runner = Runner {
        sc,
        policy: Policy::of(kind),
        disturbance: sc.system.noise.disturbance_box(),
    };
    runner.run(kind, seed)
}

pub fn run_proposed(sc: Scenario<'_>, seed: u64) -> Result<ClosedLoopTrace> {
    run_controller(ControllerKind::Proposed, sc, seed)
}

pub fn run_linear(sc: Scenario<'_>, seed: u64) -> Result<ClosedLoopTrace> {
    run_controller(ControllerKind::Linear, sc, seed)
}

pub fn run_unconstrained(sc: Scenario<'_>, seed: u64) -> Result<ClosedLoopTrace> {
    run_controller(ControllerKind::Unconstrained, sc, seed)
}

pub fn run_naive(sc: Scenario<'_>, seed: u64, tol: f64) -> Result<ClosedLoopTrace> {
    run_controller(ControllerKind::naive(tol)?, sc, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::plant::{collect_dataset, DatasetPlan, Dynamics, NoiseSpec};

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn affine_setup(noise: NoiseSpec) -> (TaskSpec, TrueSystem, TrainingSet, Resamples, ControllerSettings) {
        let sys = TrueSystem::new(
            Dynamics::Affine {
                offset: s(0.1),
                matrix: DMatrix::from_element(1, 1, 0.8),
            },
            DMatrix::from_element(1, 1, 1.0),
            noise,
        )
        .unwrap();
        let plan = DatasetPlan {
            count: 80,
            state_box: BoxSet::from_slices(&[1.0], &[4.0]).unwrap(),
            input_box: BoxSet::from_slices(&[0.0], &[2.0]).unwrap(),
            noisy: false,
            seed: 3,
        };
        let data = collect_dataset(&sys, &plan).unwrap();
        let training = TrainingSet::from_dataset(&data, &sys.input_matrix).unwrap();
        let resamples = Resamples::draw(training.len(), 60, 5);
        let task = TaskSpec {
            x_start: vec![4.0],
            x_goal: vec![0.5],
            u_goal: vec![0.0],
            goal_set: BoxSet::from_slices(&[0.5], &[0.1]).unwrap(),
            state_constraints: BoxSet::from_slices(&[1.0], &[50.0]).unwrap(),
            input_constraints: BoxSet::from_slices(&[0.0], &[50.0]).unwrap(),
            duration: 8,
            initial_horizon: 4,
        };
        let settings = ControllerSettings {
            kernel: KernelSpec::new(1.0, 3, 0.0),
            grid: GridSpec::new(0.5, 0.01, 20),
            alpha: 0.05,
            center_estimation_band: true,
            weights: CostWeights::diagonal(1, 1, 1.0, 1.0, 1.0).unwrap(),
            shorten_initial_horizon: true,
        };
        (task, sys, training, resamples, settings)
    }

    #[test]
    fn equally_spaced_endpoints() {
        let pts = equally_spaced(&s(4.0), &s(-1.0), 6);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0][0], 4.0);
        assert!((pts[5][0] + 1.0).abs() < 1e-15);
        assert!((pts[1][0] - 3.0).abs() < 1e-15);
        assert_eq!(equally_spaced(&s(2.0), &s(0.0), 1), vec![s(2.0)]);
    }

    #[test]
    fn labels_and_validation() {
        assert_eq!(ControllerKind::naive(0.3).unwrap().label(), "naive_0.3");
        assert!(ControllerKind::naive(0.0).is_err());
        let json = serde_json::to_string(&ControllerKind::Naive { tol: 0.1 }).unwrap();
        assert_eq!(json, r#"{"kind":"naive","tol":0.1}"#);
    }

    #[test]
    fn affine_plant_runs_are_deterministic_and_consistent() {
        let (task, sys, training, resamples, settings) = affine_setup(NoiseSpec::new(vec![0.0], vec![0.2], vec![0.05]).unwrap());
        let sc = Scenario {
            task: &task,
            system: &sys,
            training: &training,
            resamples: &resamples,
            settings: &settings,
        };
        for kind in [
            ControllerKind::Proposed,
            ControllerKind::Linear,
            ControllerKind::Unconstrained,
            ControllerKind::Naive { tol: 0.5 },
        ] {
            let a = run_controller(kind, sc, 7).unwrap();
            let b = run_controller(kind, sc, 7).unwrap();
            assert_eq!(a, b);
            for t in 0..a.inputs.len() {
                let next = sys.step_with(&a.states[t], &a.inputs[t], &a.disturbances[t]);
                assert_eq!(next, a.states[t + 1]);
            }
            let total: f64 = a.stage_costs.iter().sum();
            assert!((total - a.cumulative_cost).abs() < 1e-12);
            for w in a.horizons.windows(2) {
                assert!(w[1] <= w[0]);
            }
            let mut buf = Vec::new();
            a.write_csv(&mut buf).unwrap();
            assert_eq!(String::from_utf8(buf).unwrap().lines().count(), a.inputs.len() + 2);
        }
    }

    #[test]
    fn paired_noise_across_controllers() {
        let (task, sys, training, resamples, settings) = affine_setup(NoiseSpec::new(vec![0.0], vec![0.2], vec![0.05]).unwrap());
        let sc = Scenario {
            task: &task,
            system: &sys,
            training: &training,
            resamples: &resamples,
            settings: &settings,
        };
        let a = run_proposed(sc, 3).unwrap();
        let b = run_linear(sc, 3).unwrap();
        assert_eq!(a.disturbances, b.disturbances);
    }
}
