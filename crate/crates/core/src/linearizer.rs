//! Adaptive linearization regions.
//!
//! Around a linearization point the local affine model is compared with the
//! nonparametric estimate on a hypercube lattice of spacing `dx`. The lattice
//! grows one shell at a time until some point deviates by more than
//! `eps_lin`; the last lattice that passed becomes the region.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{estimation_error_set, local_fit, KernelSpec, LocalFit, Resamples, TrainingSet};
use crate::plant::fmt_real;
use crate::set_algebra::BoxSet;

/// Lattice spacing, error threshold and growth cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dx: f64,
    pub eps_lin: f64,
    pub max_steps: usize,
}

impl GridSpec {
    pub fn new(dx: f64, eps_lin: f64, max_steps: usize) -> Self {
        Self {
            dx,
            eps_lin,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !self.dx.is_finite() {
            return Err(Error::usage("grid spacing dx must be positive"));
        }
        if !(self.eps_lin > 0.0) || !self.eps_lin.is_finite() {
            return Err(Error::usage("eps_lin must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::usage("max_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Affine prediction model `x+ = offset + matrix x + B u`, valid on `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    pub offset: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub input_matrix: DMatrix<f64>,
    pub region: BoxSet,
    /// Worst-case bootstrap deviation over the region grid.
    pub estimation_set: BoxSet,
    /// `[-eps_lin, eps_lin]^n`.
    pub linearization_set: BoxSet,
}

impl AffineModel {
    /// Model with zero error sets and the given region.
    pub fn exact(
        offset: DVector<f64>,
        matrix: DMatrix<f64>,
        input_matrix: DMatrix<f64>,
        region: BoxSet,
    ) -> Result<Self> {
        let n = offset.len();
        check_dim("AffineModel matrix rows", n, matrix.nrows())?;
        check_dim("AffineModel matrix cols", n, matrix.ncols())?;
        check_dim("AffineModel input rows", n, input_matrix.nrows())?;
        check_dim("AffineModel region", n, region.dim())?;
        Ok(Self {
            offset,
            matrix,
            input_matrix,
            region,
            estimation_set: BoxSet::zero(n),
            linearization_set: BoxSet::zero(n),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.offset.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    /// Drift part `offset + matrix x`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.matrix * x
    }

    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + &self.input_matrix * u
    }
}

/// One growth step of the lattice search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepAudit {
    pub step: usize,
    pub grid_size: usize,
    /// Largest deviation seen on the lattice of this step.
    pub max_error: f64,
    pub accepted: bool,
}

/// Accepted lattice around a point.
#[derive(Debug, Clone, PartialEq)]
pub struct GrownRegion {
    pub region: BoxSet,
    pub grid: Vec<DVector<f64>>,
    /// Number of accepted expansions; the region half-width is `steps * dx`.
    pub steps: usize,
    /// Growth stopped at `max_steps` rather than at a violation.
    pub capped: bool,
    /// Largest deviation over the accepted grid.
    pub max_error: f64,
    pub audit: Vec<StepAudit>,
}

/// Integer offsets in `{-s..s}^n` with at least one coordinate equal to `±s`.
fn shell_offsets(n: usize, s: i64) -> Vec<Vec<i64>> {
    if s == 0 {
        return vec![vec![0; n]];
    }
    let side = 2 * s + 1;
    let total = (side as usize).pow(n as u32);
    let mut out = Vec::new();
    let mut digits = vec![-s; n];
    for _ in 0..total {
        if digits.iter().any(|d| d.abs() == s) {
            out.push(digits.clone());
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d <= s {
                break;
            }
            *d = -s;
        }
    }
    out
}

/// Lattice search around `center`.
///
/// `model` is the affine candidate and `reference` the estimate it must track
/// to within `eps_lin` (infinity norm) on every lattice point.
pub fn grow_region<M, F>(
    center: &DVector<f64>,
    model: M,
    reference: F,
    grid: &GridSpec,
) -> Result<GrownRegion>
where
    M: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    grid.validate()?;
    let n = center.len();
    let deviation = |g: &DVector<f64>| -> Result<f64> {
        let r = reference(g)?;
        check_dim("grow_region reference", n, r.len())?;
        Ok((model(g) - r).amax())
    };

    let mut accepted = vec![center.clone()];
    let mut max_error = deviation(center)?;
    let mut audit = vec![StepAudit {
        step: 0,
        grid_size: 1,
        max_error,
        accepted: max_error <= grid.eps_lin,
    }];
    if max_error > grid.eps_lin {
        return Err(Error::Internal(format!(
            "linearization point itself deviates by {max_error:e}"
        )));
    }

    let mut steps = 0;
    let mut capped = true;
    for s in 1..=grid.max_steps {
        let shell: Vec<DVector<f64>> = shell_offsets(n, s as i64)
            .into_iter()
            .map(|o| DVector::from_fn(n, |i, _| center[i] + o[i] as f64 * grid.dx))
            .collect();
        let errors: Vec<f64> = shell.par_iter().map(deviation).collect::<Result<_>>()?;
        let shell_max = errors.iter().cloned().fold(0.0, f64::max);
        let step_max = shell_max.max(max_error);
        let ok = shell_max <= grid.eps_lin;
        audit.push(StepAudit {
            step: s,
            grid_size: accepted.len() + shell.len(),
            max_error: step_max,
            accepted: ok,
        });
        if !ok {
            capped = false;
            break;
        }
        accepted.extend(shell);
        max_error = step_max;
        steps = s;
    }

    let half = steps as f64 * grid.dx;
    let region = BoxSet::new(center.clone(), DVector::from_element(n, half))?;
    Ok(GrownRegion {
        region,
        grid: accepted,
        steps,
        capped,
        max_error,
        audit,
    })
}

/// Local model and accepted region around one linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationResult {
    pub point: DVector<f64>,
    pub fit: LocalFit,
    pub region: BoxSet,
    pub grid: Vec<DVector<f64>>,
    pub eps_lin: f64,
    pub steps_taken: usize,
    pub capped: bool,
    pub max_error: f64,
    pub audit: Vec<StepAudit>,
}

impl LinearizationResult {
    /// `[-eps_lin, eps_lin]^n`.
    pub fn linearization_set(&self) -> BoxSet {
        BoxSet::symmetric(DVector::from_element(self.point.len(), self.eps_lin))
            .expect("eps_lin is positive")
    }
}

/// Fits the local model at `point` and grows its region against fresh
/// nonparametric estimates at every lattice point.
pub fn linearize_at(
    data: &TrainingSet,
    point: &DVector<f64>,
    grid: &GridSpec,
    kernel: &KernelSpec,
) -> Result<LinearizationResult> {
    let fit = local_fit(data, point, kernel)?;
    let grown = grow_region(
        point,
        |g| fit.eval(g),
        |g| Ok(local_fit(data, g, kernel)?.point_estimate()),
        grid,
    )?;
    Ok(LinearizationResult {
        point: point.clone(),
        fit,
        region: grown.region,
        grid: grown.grid,
        eps_lin: grid.eps_lin,
        steps_taken: grown.steps,
        capped: grown.capped,
        max_error: grown.max_error,
        audit: grown.audit,
    })
}

/// Independent `linearize_at` per point, in order.
pub fn linearize_trajectory(
    data: &TrainingSet,
    points: &[DVector<f64>],
    grid: &GridSpec,
    kernel: &KernelSpec,
) -> Result<Vec<LinearizationResult>> {
    if points.is_empty() {
        return Err(Error::usage("linearization trajectory is empty"));
    }
    points
        .iter()
        .map(|p| linearize_at(data, p, grid, kernel))
        .collect()
}

/// Settings shared by every model built along a trajectory.
#[derive(Debug, Clone)]
pub struct ModelSettings<'a> {
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub alpha: f64,
    pub resamples: &'a Resamples,
    pub center_estimation_band: bool,
}

/// Attaches the bootstrap estimation set of the accepted grid and the
/// linearization set to a linearization result.
pub fn model_from_linearization(
    data: &TrainingSet,
    lin: &LinearizationResult,
    input_matrix: &DMatrix<f64>,
    settings: &ModelSettings<'_>,
) -> Result<AffineModel> {
    let (estimation_set, _) = estimation_error_set(
        data,
        &lin.grid,
        &settings.kernel,
        settings.alpha,
        settings.resamples,
        settings.center_estimation_band,
    )?;
    Ok(AffineModel {
        offset: lin.fit.offset.clone(),
        matrix: lin.fit.matrix.clone(),
        input_matrix: input_matrix.clone(),
        region: lin.region.clone(),
        estimation_set,
        linearization_set: lin.linearization_set(),
    })
}

/// Linearizes at every point and builds the full models.
pub fn models_along(
    data: &TrainingSet,
    points: &[DVector<f64>],
    input_matrix: &DMatrix<f64>,
    settings: &ModelSettings<'_>,
) -> Result<(Vec<LinearizationResult>, Vec<AffineModel>)> {
    let lins = linearize_trajectory(data, points, &settings.grid, &settings.kernel)?;
    let models = lins
        .iter()
        .map(|l| model_from_linearization(data, l, input_matrix, settings))
        .collect::<Result<_>>()?;
    Ok((lins, models))
}

/// Writes `step, grid_size, max_error, accepted` rows.
pub fn write_audit_csv<W: Write>(out: W, audit: &[StepAudit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "grid_size", "max_error", "accepted"])?;
    for a in audit {
        w.write_record([
            a.step.to_string(),
            a.grid_size.to_string(),
            fmt_real(a.max_error),
            a.accepted.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("linearization audit", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn cube_root_training(count: usize) -> TrainingSet {
        let pairs: Vec<_> = (0..count)
            .map(|i| {
                let x = -2.0 + 6.5 * i as f64 / (count - 1) as f64;
                (s(x), s(x.cbrt()))
            })
            .collect();
        TrainingSet::from_pairs(&pairs).unwrap()
    }

    #[test]
    fn shells_partition_the_lattice() {
        for n in 1..=3 {
            let mut total = 0;
            for s in 0..=3 {
                let shell = shell_offsets(n, s);
                assert!(shell.iter().all(|o| o.iter().map(|v| v.abs()).max().unwrap() == s));
                total += shell.len();
                assert_eq!(total, (2 * s as usize + 1).pow(n as u32));
            }
        }
    }

    #[test]
    fn quadratic_oracle_region() {
        // tangent model 0 at the origin against x^2: accepted half-width h
        // satisfies h^2 <= eps < (h + dx)^2
        for (dx, eps) in [(0.1, 0.05), (0.05, 0.3), (0.2, 1.0), (0.1, 0.0001)] {
            let grid = GridSpec::new(dx, eps, 200);
            let r = grow_region(&s(0.0), |_| s(0.0), |g| Ok(s(g[0] * g[0])), &grid).unwrap();
            let h = r.region.radius()[0];
            assert!(h * h <= eps + 1e-12, "dx={dx} eps={eps} h={h}");
            assert!((h + dx) * (h + dx) > eps, "dx={dx} eps={eps} h={h}");
            assert!(!r.capped);
        }
    }

    #[test]
    fn affine_data_grows_to_cap() {
        let pairs: Vec<_> = (0..60)
            .map(|i| {
                let x = -2.0 + 0.1 * i as f64;
                (s(x), s(2.0 + 0.5 * x))
            })
            .collect();
        let data = TrainingSet::from_pairs(&pairs).unwrap();
        let kernel = KernelSpec::new(0.5, 3, 0.0);
        let grid = GridSpec::new(0.05, 0.01, 12);
        let lin = linearize_at(&data, &s(1.0), &grid, &kernel).unwrap();
        assert!(lin.capped);
        assert_eq!(lin.steps_taken, 12);
        assert!((lin.region.radius()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cube_root_regions_widen_away_from_origin() {
        let data = cube_root_training(200);
        let kernel = KernelSpec::new(0.4, 3, 1e-8);
        let grid = GridSpec::new(0.01, 0.01, 200);
        let near = linearize_at(&data, &s(0.2), &grid, &kernel).unwrap();
        let far = linearize_at(&data, &s(4.0), &grid, &kernel).unwrap();
        assert!(far.region.radius()[0] > near.region.radius()[0]);
    }

    #[test]
    fn model_matches_estimate_at_point() {
        let data = cube_root_training(120);
        let kernel = KernelSpec::new(0.4, 3, 1e-8);
        let grid = GridSpec::new(0.02, 0.02, 50);
        let lin = linearize_at(&data, &s(1.3), &grid, &kernel).unwrap();
        let direct = local_fit(&data, &s(1.3), &kernel).unwrap().point_estimate();
        assert_eq!(lin.fit.eval(&s(1.3)), direct);
        assert!(lin.region.contains(&lin.point));
        assert_eq!(lin.audit[0].max_error, 0.0);
    }

    #[test]
    fn trajectory_preserves_order_and_duplicates() {
        let data = cube_root_training(120);
        let kernel = KernelSpec::new(0.4, 3, 1e-8);
        let grid = GridSpec::new(0.02, 0.02, 50);
        let pts: Vec<_> = (0..6).map(|i| s(4.0 - i as f64)).collect();
        let lins = linearize_trajectory(&data, &pts, &grid, &kernel).unwrap();
        assert_eq!(lins.len(), 6);
        for (l, p) in lins.iter().zip(&pts) {
            assert_eq!(&l.point, p);
            assert!(l.region.contains(p));
        }
        let dup = linearize_trajectory(&data, &[s(2.0), s(2.0)], &grid, &kernel).unwrap();
        assert_eq!(dup[0], dup[1]);
        let single = linearize_trajectory(&data, &[s(2.0)], &grid, &kernel).unwrap();
        assert_eq!(single[0], linearize_at(&data, &s(2.0), &grid, &kernel).unwrap());
        assert!(linearize_trajectory(&data, &[], &grid, &kernel).is_err());
    }

    #[test]
    fn two_dimensional_region_is_a_cube() {
        let center = DVector::from_column_slice(&[0.0, 0.0]);
        let grid = GridSpec::new(0.1, 0.25, 50);
        let r = grow_region(
            &center,
            |_| DVector::zeros(2),
            |g| Ok(DVector::from_column_slice(&[g[0] * g[0], g[1].abs()])),
            &grid,
        )
        .unwrap();
        // limited by the |x_1| component: 0.2 passes, 0.3 fails
        assert!((r.region.radius()[0] - 0.2).abs() < 1e-12);
        assert_eq!(r.region.radius()[0], r.region.radius()[1]);
        assert_eq!(r.grid.len(), 25);
    }

    #[test]
    fn invalid_grid_rejected() {
        let g = GridSpec::new(0.0, 0.1, 5);
        assert!(grow_region(&s(0.0), |_| s(0.0), |_| Ok(s(0.0)), &g).is_err());
        let g = GridSpec::new(0.1, 0.1, 0);
        assert!(g.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn accepted_grid_respects_threshold(x in -1.5..4.0f64, eps in 0.002..0.05f64) {
            let data = cube_root_training(150);
            let kernel = KernelSpec::new(0.4, 3, 1e-8);
            let grid = GridSpec::new(0.02, eps, 40);
            let lin = linearize_at(&data, &s(x), &grid, &kernel).unwrap();
            for g in &lin.grid {
                let reference = local_fit(&data, g, &kernel).unwrap().point_estimate();
                prop_assert!((lin.fit.eval(g) - reference).amax() <= eps);
            }
            let steps = lin.region.radius()[0] / grid.dx;
            prop_assert!((steps - steps.round()).abs() < 1e-9);
        }

        #[test]
        fn smaller_threshold_gives_nested_region(x in -1.5..4.0f64, eps in 0.002..0.05f64) {
            let data = cube_root_training(150);
            let kernel = KernelSpec::new(0.4, 3, 1e-8);
            let big = linearize_at(&data, &s(x), &GridSpec::new(0.02, eps, 40), &kernel).unwrap();
            let small = linearize_at(&data, &s(x), &GridSpec::new(0.02, eps / 2.0, 40), &kernel).unwrap();
            prop_assert!(small.region.is_subset_of(&big.region));
        }
    }
}
