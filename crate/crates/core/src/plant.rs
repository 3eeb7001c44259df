//! The true (unknown to the controller) system, its disturbance model, the
//! control task and offline data collection.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::set_algebra::BoxSet;

/// Random generator used throughout: ChaCha with 8 rounds, seeded through
/// `seed_from_u64`. Independent substreams use `set_stream`.
pub type Rng64 = ChaCha8Rng;

/// Stream ids keep disturbance, dataset and bootstrap draws independent even
/// when they share a seed.
pub mod streams {
    pub const DISTURBANCE: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const MONTE_CARLO: u64 = 3;
    pub const SELFTEST: u64 = 4;
    pub const BOOTSTRAP_BASE: u64 = 1 << 32;
}

pub fn rng_for(seed: u64, stream: u64) -> Rng64 {
    let mut rng = Rng64::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

type DynFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Drift term `f` of `x+ = f(x) + B u + w`.
#[derive(Clone)]
pub enum Dynamics {
    /// Component-wise real cube root.
    CubeRoot { dim: usize },
    /// `f(x) = offset + matrix * x`.
    Affine {
        offset: DVector<f64>,
        matrix: DMatrix<f64>,
    },
    Custom {
        name: String,
        dim: usize,
        f: Arc<DynFn>,
    },
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::CubeRoot { dim } => write!(f, "CubeRoot({dim})"),
            Dynamics::Affine { offset, matrix } => f
                .debug_struct("Affine")
                .field("offset", &offset.as_slice())
                .field("matrix", &matrix.as_slice())
                .finish(),
            Dynamics::Custom { name, dim, .. } => write!(f, "Custom({name}, {dim})"),
        }
    }
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::CubeRoot { dim } => *dim,
            Dynamics::Affine { offset, .. } => offset.len(),
            Dynamics::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Dynamics::CubeRoot { .. } => x.map(f64::cbrt),
            Dynamics::Affine { offset, matrix } => offset + matrix * x,
            Dynamics::Custom { f, .. } => f(x),
        }
    }
}

/// Truncated normal disturbance `N(mu, sigma^2)` conditioned on `|w - mu| <= tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        let spec = Self {
            mu,
            sigma,
            tau,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero disturbance in `dim` coordinates.
    pub fn disabled(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma: vec![0.0; dim],
            tau: vec![0.0; dim],
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("NoiseSpec sigma", self.mu.len(), self.sigma.len())?;
        check_dim("NoiseSpec tau", self.mu.len(), self.tau.len())?;
        for i in 0..self.mu.len() {
            if !(self.sigma[i] >= 0.0) || !(self.tau[i] >= 0.0) {
                return Err(Error::usage("noise sigma and tau must be non-negative"));
            }
            // a zero-width truncation only makes sense for a deterministic coordinate
            if self.sigma[i] > 0.0 && self.tau[i] == 0.0 {
                return Err(Error::usage("noise tau must be positive when sigma > 0"));
            }
        }
        Ok(())
    }

    /// The bounding disturbance set `W = Box(mu, tau)`.
    pub fn disturbance_box(&self) -> BoxSet {
        BoxSet::from_slices(&self.mu, &self.tau).expect("validated noise spec")
    }
}

/// Draws one truncated-normal vector by per-coordinate rejection.
pub fn sample_truncated_normal<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(spec.dim(), |i, _| {
        let (mu, sigma, tau) = (spec.mu[i], spec.sigma[i], spec.tau[i]);
        if sigma == 0.0 {
            return mu;
        }
        let normal = Normal::new(mu, sigma).expect("finite sigma");
        loop {
            let w: f64 = normal.sample(rng);
            if (w - mu).abs() <= tau {
                return w;
            }
        }
    })
}

/// Disturbances pre-drawn for a whole run so that every controller sees the
/// same sequence for a given seed.
pub fn disturbance_sequence(spec: &NoiseSpec, seed: u64, len: usize) -> Vec<DVector<f64>> {
    let mut rng = rng_for(seed, streams::DISTURBANCE);
    (0..len).map(|_| sample_truncated_normal(spec, &mut rng)).collect()
}

/// `x+ = f(x) + B u + w`.
#[derive(Debug, Clone)]
pub struct TrueSystem {
    pub dynamics: Dynamics,
    pub input_matrix: DMatrix<f64>,
    pub noise: NoiseSpec,
}

impl TrueSystem {
    pub fn new(dynamics: Dynamics, input_matrix: DMatrix<f64>, noise: NoiseSpec) -> Result<Self> {
        check_dim("TrueSystem B rows", dynamics.dim(), input_matrix.nrows())?;
        check_dim("TrueSystem noise", dynamics.dim(), noise.dim())?;
        noise.validate()?;
        Ok(Self {
            dynamics,
            input_matrix,
            noise,
        })
    }

    /// The scalar plant `x+ = cbrt(x) + u + w`.
    pub fn cube_root(noise: NoiseSpec) -> Result<Self> {
        Self::new(
            Dynamics::CubeRoot { dim: 1 },
            DMatrix::from_element(1, 1, 1.0),
            noise,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    /// Noise-free successor `f(x) + B u`.
    pub fn nominal_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.dynamics.eval(x) + &self.input_matrix * u
    }

    pub fn step_with(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        self.nominal_step(x, u) + w
    }

    /// One step of the true system with a freshly sampled disturbance.
    pub fn step_true<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let w = sample_truncated_normal(&self.noise, rng);
        self.step_with(x, u, &w)
    }
}

/// One observed transition `(x, x+, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    input_dim: usize,
    records: Vec<Transition>,
}

impl Dataset {
    pub fn new(state_dim: usize, input_dim: usize, records: Vec<Transition>) -> Result<Self> {
        for r in &records {
            check_dim("Dataset x", state_dim, r.x.len())?;
            check_dim("Dataset x_plus", state_dim, r.x_plus.len())?;
            check_dim("Dataset u", input_dim, r.u.len())?;
        }
        Ok(Self {
            state_dim,
            input_dim,
            records,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn header(&self) -> Vec<String> {
        let n = self.state_dim;
        let m = self.input_dim;
        (0..n)
            .map(|i| format!("x_{i}"))
            .chain((0..n).map(|i| format!("xplus_{i}")))
            .chain((0..m).map(|i| format!("u_{i}")))
            .collect()
    }

    /// Writes the CSV form: header `x_*, xplus_*, u_*`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            let row: Vec<String> = r
                .x
                .iter()
                .chain(r.x_plus.iter())
                .chain(r.u.iter())
                .map(|v| fmt_real(*v))
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("dataset csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let n = headers.iter().filter(|h| h.starts_with("x_")).count();
        let n_plus = headers.iter().filter(|h| h.starts_with("xplus_")).count();
        let m = headers.iter().filter(|h| h.starts_with("u_")).count();
        if n == 0 || n != n_plus || headers.len() != 2 * n + m {
            return Err(Error::usage(format!(
                "dataset header must be x_*, xplus_*, u_*; got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let vals: Vec<f64> = row
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::usage(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            records.push(Transition {
                x: DVector::from_column_slice(&vals[..n]),
                x_plus: DVector::from_column_slice(&vals[n..2 * n]),
                u: DVector::from_column_slice(&vals[2 * n..]),
            });
        }
        Dataset::new(n, m, records)
    }
}

/// Decimal rendering with 17 significant digits, enough to round-trip any f64.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// How offline data is gathered: states uniform over `state_box`, inputs
/// uniform over `input_box`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub count: usize,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    /// Add plant disturbances to the recorded successors.
    #[serde(default)]
    pub noisy: bool,
    pub seed: u64,
}

pub fn collect_dataset(sys: &TrueSystem, plan: &DatasetPlan) -> Result<Dataset> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    check_dim("DatasetPlan state box", n, plan.state_box.dim())?;
    check_dim("DatasetPlan input box", m, plan.input_box.dim())?;
    if plan.count < n + 1 {
        return Err(Error::usage(format!(
            "dataset of {} records cannot support a local affine fit in {} dimensions (need at least {})",
            plan.count,
            n,
            n + 1
        )));
    }
    if plan.state_box.is_empty() || plan.input_box.is_empty() {
        return Err(Error::usage("dataset sampling boxes must be non-empty"));
    }
    let mut rng = rng_for(plan.seed, streams::DATASET);
    let uniform_in = |b: &BoxSet, rng: &mut Rng64| {
        DVector::from_fn(b.dim(), |i, _| {
            let (c, r) = (b.center()[i], b.radius()[i]);
            if r == 0.0 {
                c
            } else {
                rng.random_range(c - r..=c + r)
            }
        })
    };
    let records = (0..plan.count)
        .map(|_| {
            let x = uniform_in(&plan.state_box, &mut rng);
            let u = uniform_in(&plan.input_box, &mut rng);
            let x_plus = if plan.noisy {
                sys.step_true(&x, &u, &mut rng)
            } else {
                sys.nominal_step(&x, &u)
            };
            Transition { x, x_plus, u }
        })
        .collect();
    Dataset::new(n, m, records)
}

/// Start, goal and constraint sets of a control task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub x_start: Vec<f64>,
    pub x_goal: Vec<f64>,
    pub u_goal: Vec<f64>,
    pub goal_set: BoxSet,
    pub state_constraints: BoxSet,
    pub input_constraints: BoxSet,
    /// Task duration `N`.
    pub duration: usize,
    /// Initial horizon `T_0`.
    pub initial_horizon: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.x_start.len();
        check_dim("TaskSpec x_goal", n, self.x_goal.len())?;
        check_dim("TaskSpec goal set", n, self.goal_set.dim())?;
        check_dim("TaskSpec state constraints", n, self.state_constraints.dim())?;
        check_dim("TaskSpec input constraints", self.u_goal.len(), self.input_constraints.dim())?;
        if !self.goal_set.contains(&self.x_goal()) {
            return Err(Error::usage("goal state must lie in the goal set"));
        }
        if !self.goal_set.is_subset_of(&self.state_constraints) {
            return Err(Error::usage("goal set must lie inside the state constraints"));
        }
        if !self.input_constraints.contains(&self.u_goal()) {
            return Err(Error::usage("goal input must satisfy the input constraints"));
        }
        if self.duration == 0 || self.initial_horizon == 0 {
            return Err(Error::usage("task duration and initial horizon must be positive"));
        }
        Ok(())
    }

    pub fn x_start(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_start)
    }

    pub fn x_goal(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_goal)
    }

    pub fn u_goal(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_goal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn cube_root_noise() -> NoiseSpec {
        NoiseSpec::new(vec![0.0], vec![0.2], vec![0.05]).unwrap()
    }

    #[test]
    fn cube_root_noise_free_steps() {
        let sys = TrueSystem::cube_root(NoiseSpec::disabled(1)).unwrap();
        let mut rng = rng_for(0, 0);
        assert!((sys.step_true(&scalar(8.0), &scalar(0.0), &mut rng)[0] - 2.0).abs() < 1e-15);
        assert!((sys.step_true(&scalar(0.0), &scalar(0.5), &mut rng)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noisy_step_stays_in_band() {
        let sys = TrueSystem::cube_root(cube_root_noise()).unwrap();
        let mut rng = rng_for(3, 0);
        let c = 4f64.cbrt();
        for _ in 0..1000 {
            let x = sys.step_true(&scalar(4.0), &scalar(0.0), &mut rng)[0];
            assert!(x >= c - 0.05 && x <= c + 0.05);
        }
    }

    #[test]
    fn truncated_normal_bounds_and_determinism() {
        let spec = cube_root_noise();
        let mut rng = rng_for(11, 0);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&spec, &mut rng)[0])
            .collect();
        assert!(samples.iter().all(|w| (-0.05..=0.05).contains(w)));
        assert!(samples.iter().all(|w| spec.disturbance_box().contains(&scalar(*w))));

        let a = disturbance_sequence(&spec, 5, 50);
        let b = disturbance_sequence(&spec, 5, 50);
        assert_eq!(a, b);
        assert_ne!(a, disturbance_sequence(&spec, 6, 50));
    }

    #[test]
    fn wide_truncation_recovers_the_mean() {
        let spec = NoiseSpec::new(vec![0.3], vec![0.2], vec![20.0]).unwrap();
        let mut rng = rng_for(1, 0);
        let k = 20_000;
        let mean = (0..k)
            .map(|_| sample_truncated_normal(&spec, &mut rng)[0])
            .sum::<f64>()
            / k as f64;
        assert!((mean - 0.3).abs() < 3.0 * 0.2 / (k as f64).sqrt());
    }

    #[test]
    fn zero_sigma_returns_mu() {
        let spec = NoiseSpec::new(vec![0.25], vec![0.0], vec![0.0]).unwrap();
        let mut rng = rng_for(1, 0);
        assert_eq!(sample_truncated_normal(&spec, &mut rng)[0], 0.25);
    }

    #[test]
    fn invalid_noise_rejected() {
        assert!(NoiseSpec::new(vec![0.0], vec![0.2], vec![0.0]).is_err());
        assert!(NoiseSpec::new(vec![0.0], vec![-1.0], vec![0.1]).is_err());
    }

    fn plan(count: usize) -> DatasetPlan {
        DatasetPlan {
            count,
            state_box: BoxSet::from_bounds(&scalar(-2.0), &scalar(4.5)).unwrap(),
            input_box: BoxSet::from_slices(&[0.0], &[1.0]).unwrap(),
            noisy: false,
            seed: 42,
        }
    }

    #[test]
    fn dataset_collection() {
        let sys = TrueSystem::cube_root(cube_root_noise()).unwrap();
        let d = collect_dataset(&sys, &plan(200)).unwrap();
        assert_eq!(d.len(), 200);
        for r in d.records() {
            assert!(r.x[0] >= -2.0 && r.x[0] <= 4.5);
            assert_eq!(r.x_plus, sys.nominal_step(&r.x, &r.u));
        }
        assert!(matches!(collect_dataset(&sys, &plan(1)), Err(Error::Usage(_))));
    }

    #[test]
    fn linear_dataset_is_exact() {
        let sys = TrueSystem::new(
            Dynamics::Affine {
                offset: scalar(0.0),
                matrix: DMatrix::from_element(1, 1, 0.9),
            },
            DMatrix::from_element(1, 1, 1.0),
            NoiseSpec::disabled(1),
        )
        .unwrap();
        let d = collect_dataset(&sys, &plan(50)).unwrap();
        for r in d.records() {
            assert_eq!(r.x_plus[0], 0.9 * r.x[0] + r.u[0]);
        }
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let sys = TrueSystem::cube_root(cube_root_noise()).unwrap();
        let d = collect_dataset(&sys, &plan(20)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,xplus_0,u_0\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn task_validation() {
        let task = TaskSpec {
            x_start: vec![4.0],
            x_goal: vec![-1.0],
            u_goal: vec![0.0],
            goal_set: BoxSet::from_slices(&[-1.0], &[0.1]).unwrap(),
            state_constraints: BoxSet::from_bounds(&scalar(-3.0), &scalar(5.0)).unwrap(),
            input_constraints: BoxSet::from_slices(&[0.0], &[2.0]).unwrap(),
            duration: 8,
            initial_horizon: 6,
        };
        task.validate().unwrap();
        let mut bad = task.clone();
        bad.x_goal = vec![0.0];
        assert!(bad.validate().is_err());
    }
}
