//! Property suites behind the `selftest` command and the acceptance tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::error_tube::propagate_tube;
use crate::estimator::{local_fit, KernelSpec, TrainingSet};
use crate::harness::config::Experiment;
use crate::linearizer::{models_along, AffineModel, ModelSettings};
use crate::mpc::{build_ftocp, mpc_policy, solve_ftocp, CostWeights, InitialState};
use crate::plant::{rng_for, sample_truncated_normal, streams, Rng64};
use crate::set_algebra::BoxSet;

const SET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub failures: usize,
    /// Largest observed deviation where the suite measures one.
    pub max_deviation: f64,
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} checks, {} failures, max deviation {:.3e}{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.failures,
            self.max_deviation,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

pub type DiffFn = fn(&BoxSet, &BoxSet) -> Result<BoxSet>;

/// Deliberately wrong erosion (dilates instead), for the negative control.
pub fn faulty_pontryagin(a: &BoxSet, b: &BoxSet) -> Result<BoxSet> {
    a.minkowski_sum(b)
}

fn random_box(rng: &mut Rng64, n: usize) -> BoxSet {
    let c = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let r = DVector::from_fn(n, |_, _| rng.random_range(0.0..3.0));
    BoxSet::new(c, r).expect("valid random box")
}

fn close(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Minkowski sum, Pontryagin difference and linear images against vertex
/// enumeration on `pairs` random boxes in dimensions 1 to 3.
pub fn set_algebra_suite(pairs: usize, seed: u64, diff: DiffFn) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, streams::SELFTEST);
    let mut checks = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let n = 1 + i % 3;
        let a = random_box(&mut rng, n);
        let b = random_box(&mut rng, n);
        let va = a.vertices();
        let vb = b.vertices();

        // sum: hull of pairwise vertex sums
        let sums: Vec<DVector<f64>> = va.iter().flat_map(|x| vb.iter().map(move |y| x + y)).collect();
        let hull = BoxSet::bounding(&sums)?;
        let sum = a.minkowski_sum(&b)?;
        let dev = close(&hull.lower(), &sum.lower()).max(close(&hull.upper(), &sum.upper()));
        worst = worst.max(dev);
        checks += 1;
        failures += usize::from(dev > SET_TOL);

        // difference: the largest box d with d + every vertex of b inside a
        let d = diff(&a, &b)?;
        checks += 1;
        let fits = (0..n).all(|k| b.upper()[k] - b.lower()[k] <= a.upper()[k] - a.lower()[k] + SET_TOL);
        if !fits {
            failures += usize::from(!d.is_empty());
        } else if d.is_empty() {
            failures += 1;
        } else {
            let sound = d
                .vertices()
                .iter()
                .all(|p| vb.iter().all(|v| a.contains(&(p + v))));
            // moving any face outward by 1e-6 must break containment
            let mut tight = true;
            for k in 0..n {
                for dir in [-1.0, 1.0] {
                    let mut p = d.center().clone();
                    p[k] += dir * (d.radius()[k] + 1e-6);
                    if vb.iter().all(|v| a.contains(&(&p + v))) {
                        tight = false;
                    }
                }
            }
            failures += usize::from(!(sound && tight));
        }

        // linear image: hull of mapped vertices
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let mapped: Vec<DVector<f64>> = va.iter().map(|v| &m * v).collect();
        let hull = BoxSet::bounding(&mapped)?;
        let img = a.affine_image(&m)?;
        let sound = mapped.iter().all(|p| img.contains(p));
        let over = close(&hull.lower(), &img.lower()).max(close(&hull.upper(), &img.upper()));
        // the box hull of a linear image of a box is attained by its vertices
        checks += 1;
        worst = worst.max(over);
        failures += usize::from(!sound || over > 1e-8);
    }
    Ok(SuiteResult {
        name: "set_algebra".into(),
        checks,
        failures,
        max_deviation: worst,
        detail: format!("{pairs} random box pairs"),
    })
}

/// Local linear fit against an independent weighted least-squares solve on
/// `datasets` random datasets of at most 10 points.
pub fn regression_suite(datasets: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, streams::SELFTEST + 1);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..datasets {
        let n = 1 + i % 2;
        let count = rng.random_range(n + 3..=10);
        let xs: Vec<DVector<f64>> = (0..count)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ys: Vec<DVector<f64>> = (0..count)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let q = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let bandwidth = rng.random_range(3.0..6.0);
        let pairs: Vec<_> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
        let data = TrainingSet::from_pairs(&pairs)?;
        let spec = KernelSpec::new(bandwidth, n + 1, 0.0);
        let fit = local_fit(&data, &q, &spec)?;

        // sqrt(w) [1 x] theta = sqrt(w) y, solved by SVD
        let design = DMatrix::from_fn(count, n + 1, |r, c| {
            let w = epanechnikov(&xs[r], &q, bandwidth).sqrt();
            if c == 0 {
                w
            } else {
                w * xs[r][c - 1]
            }
        });
        let rhs = DMatrix::from_fn(count, n, |r, c| epanechnikov(&xs[r], &q, bandwidth).sqrt() * ys[r][c]);
        let theta = design
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| crate::Error::Internal(e.to_string()))?;
        let offset: DVector<f64> = theta.row(0).transpose();
        let matrix = theta.rows(1, n).transpose();
        let dev = close(&offset, &fit.offset).max((&matrix - &fit.matrix).amax());
        worst = worst.max(dev);
        failures += usize::from(dev > 1e-10);
    }
    Ok(SuiteResult {
        name: "regression_oracle".into(),
        checks: datasets,
        failures,
        max_deviation: worst,
        detail: "tolerance 1e-10".into(),
    })
}

fn epanechnikov(x: &DVector<f64>, q: &DVector<f64>, h: f64) -> f64 {
    let u2 = (x - q).norm_squared() / (h * h);
    if u2 < 1.0 {
        0.75 * (1.0 - u2)
    } else {
        0.0
    }
}

/// One-step problems against `u* = -q b (a + A x0 - x_f) / (r + q b^2)`.
pub fn ftocp_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, streams::SELFTEST + 2);
    let wide = BoxSet::from_slices(&[0.0], &[1e4])?;
    let s = |v: f64| DVector::from_element(1, v);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let a = rng.random_range(-1.0..1.0);
        let mat = rng.random_range(-1.5..1.5);
        let b = rng.random_range(0.2..2.0);
        let x0 = rng.random_range(-5.0..5.0);
        let xf = rng.random_range(-2.0..2.0);
        let q = rng.random_range(0.1..5.0);
        let r = rng.random_range(0.1..100.0);
        let model = AffineModel::exact(
            s(a),
            DMatrix::from_element(1, 1, mat),
            DMatrix::from_element(1, 1, b),
            wide.clone(),
        )?;
        let p = build_ftocp(
            vec![model],
            vec![Some(wide.clone())],
            wide.clone(),
            wide.clone(),
            InitialState::Fixed(s(x0)),
            s(xf),
            s(0.0),
            CostWeights::diagonal(1, 1, q, r, q)?,
        )?;
        let sol = solve_ftocp(&p)?;
        let u_star = -q * b * (a + mat * x0 - xf) / (r + q * b * b);
        let dev = if sol.feasible {
            (mpc_policy(&sol)?[0] - u_star).abs()
        } else {
            f64::INFINITY
        };
        worst = worst.max(dev);
        failures += usize::from(!(dev <= 1e-5));
    }
    Ok(SuiteResult {
        name: "ftocp_one_step".into(),
        checks: cases,
        failures,
        max_deviation: worst,
        detail: "tolerance 1e-5".into(),
    })
}

/// Per-step empirical containment of the error tube.
#[derive(Debug, Clone, Serialize)]
pub struct ContainmentStep {
    pub k: usize,
    /// Realizations with `x_j - x̄_j ∈ E_j` for every `j <= k`.
    pub fraction: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContainmentReport {
    pub realizations: usize,
    pub nominal: Vec<DVector<f64>>,
    pub steps: Vec<ContainmentStep>,
}

impl ContainmentReport {
    pub fn holds(&self) -> bool {
        self.steps.iter().all(|s| s.fraction >= s.bound)
    }
}

/// Open-loop Monte Carlo of the error tube.
///
/// The nominal trajectory follows the local models from `x0` under `inputs`,
/// each model linearized at the current nominal state. The true plant is
/// driven by the same inputs under fresh disturbances and the deviation is
/// checked against the tube built from those models. The bound at step `k` is
/// `(1 - alpha)^k - 0.05`.
pub fn tube_containment(
    exp: &Experiment,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    realizations: usize,
    seed: u64,
) -> Result<ContainmentReport> {
    let settings = &exp.settings;
    let b = &exp.system.input_matrix;
    let ms = ModelSettings {
        kernel: settings.kernel,
        grid: settings.grid,
        alpha: settings.alpha,
        resamples: &exp.resamples,
        center_estimation_band: settings.center_estimation_band,
    };
    let mut nominal = vec![x0.clone()];
    let mut models = Vec::with_capacity(inputs.len());
    for u in inputs {
        let x = nominal.last().expect("non-empty").clone();
        let (_, mut m) = models_along(&exp.training, std::slice::from_ref(&x), b, &ms)?;
        let model = m.pop().expect("one model");
        nominal.push(model.predict(&x, u));
        models.push(model);
    }
    let tube = propagate_tube(&models, &exp.system.noise.disturbance_box(), settings.alpha)?;

    let mut rng = rng_for(seed, streams::MONTE_CARLO);
    let horizon = inputs.len();
    let mut inside = vec![0usize; horizon + 1];
    for _ in 0..realizations {
        let mut x = x0.clone();
        let mut ok = true;
        inside[0] += 1;
        for k in 0..horizon {
            let w = sample_truncated_normal(&exp.system.noise, &mut rng);
            x = exp.system.step_with(&x, &inputs[k], &w);
            ok = ok && tube.sets[k + 1].contains(&(&x - &nominal[k + 1]));
            inside[k + 1] += usize::from(ok);
        }
    }
    let steps = inside
        .iter()
        .enumerate()
        .map(|(k, c)| ContainmentStep {
            k,
            fraction: *c as f64 / realizations as f64,
            bound: (1.0 - settings.alpha).powi(k as i32) - 0.05,
        })
        .collect();
    Ok(ContainmentReport {
        realizations,
        nominal,
        steps,
    })
}

pub fn containment_suite(report: &ContainmentReport) -> SuiteResult {
    let failures = report.steps.iter().filter(|s| s.fraction < s.bound).count();
    let last = report.steps.last();
    SuiteResult {
        name: "tube_containment".into(),
        checks: report.steps.len(),
        failures,
        max_deviation: 0.0,
        detail: format!(
            "{} realizations, final fraction {:.4} vs bound {:.4}",
            report.realizations,
            last.map_or(f64::NAN, |s| s.fraction),
            last.map_or(f64::NAN, |s| s.bound)
        ),
    }
}

/// Every suite of the `selftest` command, the negative control included.
pub fn run_all(exp: &Experiment, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = vec![
        set_algebra_suite(1000, seed, BoxSet::pontryagin_diff)?,
        regression_suite(100, seed)?,
        ftocp_suite(50, seed)?,
    ];
    let mut control = set_algebra_suite(200, seed, faulty_pontryagin)?;
    // the control passes when the faulty implementation is caught
    control.name = "negative_control_faulty_pontryagin".into();
    control.detail = format!("{} failures detected", control.failures);
    control.failures = usize::from(control.failures == 0);
    out.push(control);

    let x0 = exp.config.task.x_start();
    let horizon = exp.config.task.duration;
    let inputs = vec![exp.config.task.u_goal(); horizon];
    let report = tube_containment(exp, &x0, &inputs, 1000, seed)?;
    out.push(containment_suite(&report));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_the_real_implementation() {
        assert!(set_algebra_suite(300, 1, BoxSet::pontryagin_diff).unwrap().passed());
        assert!(regression_suite(40, 1).unwrap().passed());
        assert!(ftocp_suite(20, 1).unwrap().passed());
    }

    #[test]
    fn faulty_difference_is_caught() {
        let r = set_algebra_suite(100, 1, faulty_pontryagin).unwrap();
        assert!(r.failures > 0);
    }
}
