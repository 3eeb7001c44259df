//! Kernel-weighted local linear regression of the drift `f` and bootstrap
//! percentile bands around the point estimate.
//!
//! Regression targets are `y = x+ - B u`, which recovers `f(x)` from each
//! recorded transition. At a query `q` the fit minimizes
//! `sum_j K(q, x_j) |y_j - a - A x_j|^2` with an Epanechnikov kernel `K`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::plant::{fmt_real, rng_for, streams, Dataset};
use crate::set_algebra::BoxSet;

/// Bandwidth, minimum support and ridge of the local regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Kernel radius in state units; weights vanish beyond it.
    pub bandwidth: f64,
    /// Minimum number of records with non-zero weight.
    pub min_support: usize,
    pub ridge: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, min_support: usize, ridge: f64) -> Self {
        Self {
            bandwidth,
            min_support,
            ridge,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::usage("kernel bandwidth must be positive"));
        }
        if self.min_support < state_dim + 1 {
            return Err(Error::usage(format!(
                "kernel min_support must be at least {}",
                state_dim + 1
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::usage("ridge must be non-negative"));
        }
        Ok(())
    }

    /// Bandwidth `c * diameter / M^(1/(n+4))` for a dataset spanning a box of
    /// the given diameter.
    pub fn rate_bandwidth(scale: f64, diameter: f64, count: usize, state_dim: usize) -> f64 {
        scale * diameter / (count as f64).powf(1.0 / (state_dim as f64 + 4.0))
    }
}

/// Epanechnikov weight `max(0, 3/4 (1 - (|q - x| / h)^2))`.
pub fn epanechnikov_weight(query: &DVector<f64>, x: &DVector<f64>, bandwidth: f64) -> f64 {
    let d2 = (query - x).norm_squared() / (bandwidth * bandwidth);
    kernel_from_scaled_sq(d2)
}

#[inline]
fn kernel_from_scaled_sq(d2: f64) -> f64 {
    if d2 >= 1.0 {
        0.0
    } else {
        0.75 * (1.0 - d2)
    }
}

/// States and regression targets in flat row-major storage.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    dim: usize,
    states: Vec<f64>,
    targets: Vec<f64>,
}

impl TrainingSet {
    /// Targets are `x+ - B u`.
    pub fn from_dataset(data: &Dataset, input_matrix: &DMatrix<f64>) -> Result<Self> {
        check_dim("TrainingSet B rows", data.state_dim(), input_matrix.nrows())?;
        check_dim("TrainingSet B cols", data.input_dim(), input_matrix.ncols())?;
        let n = data.state_dim();
        let mut states = Vec::with_capacity(data.len() * n);
        let mut targets = Vec::with_capacity(data.len() * n);
        for r in data.records() {
            let y = &r.x_plus - input_matrix * &r.u;
            states.extend_from_slice(r.x.as_slice());
            targets.extend_from_slice(y.as_slice());
        }
        Ok(Self {
            dim: n,
            states,
            targets,
        })
    }

    /// Direct construction from `(x, f(x))` pairs.
    pub fn from_pairs(pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<Self> {
        let dim = pairs.first().map(|p| p.0.len()).unwrap_or(0);
        let mut states = Vec::new();
        let mut targets = Vec::new();
        for (x, y) in pairs {
            check_dim("TrainingSet pair x", dim, x.len())?;
            check_dim("TrainingSet pair y", dim, y.len())?;
            states.extend_from_slice(x.as_slice());
            targets.extend_from_slice(y.as_slice());
        }
        Ok(Self {
            dim,
            states,
            targets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.states.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn target(&self, j: usize) -> &[f64] {
        &self.targets[j * self.dim..(j + 1) * self.dim]
    }

    /// Copy with records at distance `>= radius` from `query` removed.
    pub fn without_far_records(&self, query: &DVector<f64>, radius: f64) -> Self {
        let mut out = Self {
            dim: self.dim,
            states: Vec::new(),
            targets: Vec::new(),
        };
        for j in 0..self.len() {
            let d2: f64 = self
                .state(j)
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < radius * radius {
                out.states.extend_from_slice(self.state(j));
                out.targets.extend_from_slice(self.target(j));
            }
        }
        out
    }
}

/// Result of one local regression: `f(q) ≈ offset + matrix * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub offset: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub query: DVector<f64>,
    /// Records with non-zero weight.
    pub effective_support: usize,
    /// Bandwidth after any doubling.
    pub bandwidth: f64,
}

impl LocalFit {
    /// `a + A q`.
    pub fn point_estimate(&self) -> DVector<f64> {
        &self.offset + &self.matrix * &self.query
    }

    /// The fitted affine model evaluated at an arbitrary state.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.matrix * x
    }
}

pub fn point_estimate(fit: &LocalFit) -> DVector<f64> {
    fit.point_estimate()
}

/// Weighted solve at a fixed bandwidth. `multiplicity` carries bootstrap
/// counts; `None` means every record once. Returns `Ok(None)` when the
/// support is below `min_support`.
fn fit_fixed_bandwidth(
    data: &TrainingSet,
    query: &DVector<f64>,
    bandwidth: f64,
    spec: &KernelSpec,
    multiplicity: Option<&[u32]>,
) -> Result<Option<LocalFit>> {
    let n = data.dim();
    let p = n + 1;
    // regressors are centered at the query for conditioning: z = [1, x - q]
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross = DMatrix::<f64>::zeros(p, n);
    let mut z = vec![0.0; p];
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let mut support = 0usize;
    for j in 0..data.len() {
        let count = multiplicity.map_or(1, |m| m[j]);
        if count == 0 {
            continue;
        }
        let x = data.state(j);
        let mut d2 = 0.0;
        z[0] = 1.0;
        for i in 0..n {
            let dx = x[i] - query[i];
            z[i + 1] = dx;
            d2 += dx * dx;
        }
        let w = kernel_from_scaled_sq(d2 * inv_h2) * count as f64;
        if w == 0.0 {
            continue;
        }
        support += 1;
        let y = data.target(j);
        for r in 0..p {
            let wz = w * z[r];
            for c in r..p {
                gram[(r, c)] += wz * z[c];
            }
            for c in 0..n {
                cross[(r, c)] += wz * y[c];
            }
        }
    }
    if support < spec.min_support {
        return Ok(None);
    }
    for r in 0..p {
        for c in 0..r {
            gram[(r, c)] = gram[(c, r)];
        }
        gram[(r, r)] += spec.ridge;
    }
    let theta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&cross),
        None => gram
            .lu()
            .solve(&cross)
            .ok_or_else(|| Error::Estimation("singular local regression system".into()))?,
    };
    // theta rows: [b; A^T] with f(x) ≈ b + A (x - q)
    let matrix = theta.rows(1, n).transpose();
    let centered_offset: DVector<f64> = theta.row(0).transpose();
    let offset = centered_offset - &matrix * query;
    if offset.iter().chain(matrix.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite local regression estimate".into()));
    }
    Ok(Some(LocalFit {
        offset,
        matrix,
        query: query.clone(),
        effective_support: support,
        bandwidth,
    }))
}

/// Local linear fit at `query`, doubling the bandwidth until at least
/// `min_support` records carry weight.
pub fn local_fit(data: &TrainingSet, query: &DVector<f64>, spec: &KernelSpec) -> Result<LocalFit> {
    check_dim("local_fit query", data.dim(), query.len())?;
    spec.validate(data.dim())?;
    if data.len() < spec.min_support {
        return Err(Error::usage(format!(
            "dataset has {} records, fewer than min_support {}",
            data.len(),
            spec.min_support
        )));
    }
    fit_with_doubling(data, query, spec, None)
}

fn fit_with_doubling(
    data: &TrainingSet,
    query: &DVector<f64>,
    spec: &KernelSpec,
    multiplicity: Option<&[u32]>,
) -> Result<LocalFit> {
    let distinct = multiplicity.map_or(data.len(), |m| m.iter().filter(|c| **c > 0).count());
    if distinct >= spec.min_support {
        let mut h = spec.bandwidth;
        for _ in 0..64 {
            if let Some(fit) = fit_fixed_bandwidth(data, query, h, spec, multiplicity)? {
                return Ok(fit);
            }
            h *= 2.0;
        }
    }
    Err(Error::Estimation(format!(
        "no bandwidth gives support {} at {:?}",
        spec.min_support,
        query.as_slice()
    )))
}

/// Nonparametric point estimate `f̂(q)`.
pub fn predict(data: &TrainingSet, query: &DVector<f64>, spec: &KernelSpec) -> Result<DVector<f64>> {
    Ok(local_fit(data, query, spec)?.point_estimate())
}

/// Bootstrap resamples of a training set, stored as per-record counts.
///
/// Replicate `r` is drawn from its own ChaCha stream derived from
/// `(seed, r)`, so the draws do not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct Resamples {
    counts: Vec<Vec<u32>>,
    seed: u64,
}

impl Resamples {
    pub fn draw(data_len: usize, replicates: usize, seed: u64) -> Self {
        let counts = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_for(seed, streams::BOOTSTRAP_BASE + r as u64);
                let mut c = vec![0u32; data_len];
                for _ in 0..data_len {
                    c[rng.random_range(0..data_len)] += 1;
                }
                c
            })
            .collect();
        Self { counts, seed }
    }

    pub fn replicates(&self) -> usize {
        self.counts.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self, r: usize) -> &[u32] {
        &self.counts[r]
    }
}

/// Percentile interval of the bootstrap distribution of `f̂(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub query: DVector<f64>,
    pub estimate: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub alpha: f64,
    /// Replicates that produced a valid refit.
    pub replicates: usize,
    pub discarded: usize,
    /// The raw percentile interval missed the point estimate and was widened.
    pub widened: bool,
}

impl ConfidenceBand {
    /// `[lower - f̂, upper - f̂]`.
    pub fn centered(&self) -> BoxSet {
        let lo = &self.lower - &self.estimate;
        let hi = &self.upper - &self.estimate;
        BoxSet::from_bounds(&lo, &hi).expect("band brackets its estimate")
    }

    pub fn width(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_band_args(alpha: f64, resamples: &Resamples) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::usage(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if resamples.replicates() < 50 {
        return Err(Error::usage(format!(
            "bootstrap needs at least 50 replicates, got {}",
            resamples.replicates()
        )));
    }
    Ok(())
}

/// Bootstrap percentile band at `query` using pre-drawn resamples.
///
/// Each replicate is a full local fit on the resampled data, bandwidth
/// doubling included. Resamples with fewer distinct records than
/// `min_support` cannot be fitted and are discarded; more than half discarded
/// is an error.
pub fn bootstrap_band_with(
    data: &TrainingSet,
    query: &DVector<f64>,
    spec: &KernelSpec,
    alpha: f64,
    resamples: &Resamples,
) -> Result<ConfidenceBand> {
    check_band_args(alpha, resamples)?;
    let base = local_fit(data, query, spec)?;
    let estimate = base.point_estimate();
    let n = data.dim();

    let estimates: Vec<Option<DVector<f64>>> = (0..resamples.replicates())
        .into_par_iter()
        .map(|r| {
            fit_with_doubling(data, query, spec, Some(resamples.counts(r)))
                .ok()
                .map(|f| f.point_estimate())
        })
        .collect();
    let valid: Vec<&DVector<f64>> = estimates.iter().flatten().collect();
    let discarded = estimates.len() - valid.len();
    if discarded * 2 > estimates.len() {
        return Err(Error::Estimation(format!(
            "{discarded} of {} bootstrap refits lacked support at {:?}",
            estimates.len(),
            query.as_slice()
        )));
    }

    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut widened = false;
    let mut column = Vec::with_capacity(valid.len());
    for i in 0..n {
        column.clear();
        column.extend(valid.iter().map(|v| v[i]));
        column.sort_by(|a, b| a.total_cmp(b));
        let mut lo = quantile_sorted(&column, alpha / 2.0);
        let mut hi = quantile_sorted(&column, 1.0 - alpha / 2.0);
        if lo > estimate[i] {
            lo = estimate[i];
            widened = true;
        }
        if hi < estimate[i] {
            hi = estimate[i];
            widened = true;
        }
        lower[i] = lo;
        upper[i] = hi;
    }
    Ok(ConfidenceBand {
        query: query.clone(),
        estimate,
        lower,
        upper,
        alpha,
        replicates: valid.len(),
        discarded,
        widened,
    })
}

/// Convenience form that draws `replicates` resamples from `seed`.
pub fn bootstrap_band(
    data: &TrainingSet,
    query: &DVector<f64>,
    spec: &KernelSpec,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<ConfidenceBand> {
    let resamples = Resamples::draw(data.len(), replicates, seed);
    bootstrap_band_with(data, query, spec, alpha, &resamples)
}

/// Worst-case estimation set over a grid of states.
///
/// With `centered`, each band is expressed as a deviation from its point
/// estimate before the component-wise union; otherwise the raw value bounds
/// are united.
pub fn estimation_error_set(
    data: &TrainingSet,
    grid: &[DVector<f64>],
    spec: &KernelSpec,
    alpha: f64,
    resamples: &Resamples,
    centered: bool,
) -> Result<(BoxSet, Vec<ConfidenceBand>)> {
    if grid.is_empty() {
        return Err(Error::usage("estimation error set needs a non-empty grid"));
    }
    let bands: Vec<ConfidenceBand> = grid
        .iter()
        .map(|g| bootstrap_band_with(data, g, spec, alpha, resamples))
        .collect::<Result<_>>()?;
    let n = data.dim();
    let mut lo = DVector::from_element(n, f64::INFINITY);
    let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
    for b in &bands {
        let (l, u) = if centered {
            (&b.lower - &b.estimate, &b.upper - &b.estimate)
        } else {
            (b.lower.clone(), b.upper.clone())
        };
        for i in 0..n {
            lo[i] = lo[i].min(l[i]);
            hi[i] = hi[i].max(u[i]);
        }
    }
    Ok((BoxSet::from_bounds(&lo, &hi)?, bands))
}

/// Writes `(q, f̂, lower, upper)` rows, plus `f_true` when supplied.
pub fn write_band_csv<W: Write>(
    out: W,
    bands: &[ConfidenceBand],
    truth: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
) -> Result<()> {
    let n = bands.first().map(|b| b.query.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..n).map(|i| format!("x_{i}")).collect();
    if truth.is_some() {
        header.extend((0..n).map(|i| format!("f_true_{i}")));
    }
    header.extend((0..n).map(|i| format!("f_hat_{i}")));
    header.extend((0..n).map(|i| format!("lower_{i}")));
    header.extend((0..n).map(|i| format!("upper_{i}")));
    w.write_record(&header)?;
    for b in bands {
        let mut row: Vec<String> = b.query.iter().map(|v| fmt_real(*v)).collect();
        if let Some(f) = truth {
            row.extend(f(&b.query).iter().map(|v| fmt_real(*v)));
        }
        row.extend(b.estimate.iter().map(|v| fmt_real(*v)));
        row.extend(b.lower.iter().map(|v| fmt_real(*v)));
        row.extend(b.upper.iter().map(|v| fmt_real(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("band csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn affine_pairs(xs: &[f64], a: f64, b: f64) -> TrainingSet {
        let pairs: Vec<_> = xs.iter().map(|x| (s(*x), s(a + b * x))).collect();
        TrainingSet::from_pairs(&pairs).unwrap()
    }

    fn grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    }

    /// Independent route: dense weighted least squares on uncentered
    /// regressors, solved through a QR factorization of `sqrt(W) Z`.
    fn oracle_wls(data: &[(f64, f64)], query: f64, h: f64) -> (f64, f64) {
        let rows: Vec<(f64, f64, f64)> = data
            .iter()
            .map(|(x, y)| {
                let u = (x - query) / h;
                let w = if u * u < 1.0 { 0.75 * (1.0 - u * u) } else { 0.0 };
                (w.sqrt(), *x, *y)
            })
            .collect();
        let z = DMatrix::from_fn(rows.len(), 2, |r, c| {
            if c == 0 {
                rows[r].0
            } else {
                rows[r].0 * rows[r].1
            }
        });
        let y = DVector::from_fn(rows.len(), |r, _| rows[r].0 * rows[r].2);
        let qr = z.qr();
        let rhs = qr.q().transpose() * y;
        let sol = qr.r().solve_upper_triangular(&rhs).unwrap();
        (sol[0], sol[1])
    }

    #[test]
    fn kernel_values() {
        assert_eq!(epanechnikov_weight(&s(1.0), &s(1.0), 0.5), 0.75);
        assert_eq!(epanechnikov_weight(&s(0.0), &s(0.5), 0.5), 0.0);
        assert!((epanechnikov_weight(&s(0.0), &s(0.25), 0.5) - 0.5625).abs() < 1e-15);
        let q = DVector::from_column_slice(&[0.0, 0.0]);
        let x = DVector::from_column_slice(&[0.3, 0.4]);
        assert!((epanechnikov_weight(&q, &x, 1.0) - 0.75 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn affine_system_recovered_exactly() {
        let data = affine_pairs(&grid(-2.0, 4.0, 40), 2.0, 0.5);
        let spec = KernelSpec::new(0.6, 2, 0.0);
        for q in [-1.5, 0.0, 1.3, 3.0] {
            let fit = local_fit(&data, &s(q), &spec).unwrap();
            assert!((fit.offset[0] - 2.0).abs() < 1e-8);
            assert!((fit.matrix[(0, 0)] - 0.5).abs() < 1e-8);
        }
        let fit = local_fit(&data, &s(3.0), &spec).unwrap();
        assert!((fit.point_estimate()[0] - 3.5).abs() < 1e-8);
    }

    #[test]
    fn three_point_dataset_matches_oracle() {
        let pts = [(0.0, 1.0), (0.3, 0.2), (0.5, 0.9)];
        let pairs: Vec<_> = pts.iter().map(|(x, y)| (s(*x), s(*y))).collect();
        let data = TrainingSet::from_pairs(&pairs).unwrap();
        let spec = KernelSpec::new(1.0, 2, 0.0);
        let fit = local_fit(&data, &s(0.2), &spec).unwrap();
        let (a, b) = oracle_wls(&pts, 0.2, 1.0);
        assert!((fit.offset[0] - a).abs() < 1e-10);
        assert!((fit.matrix[(0, 0)] - b).abs() < 1e-10);
    }

    #[test]
    fn point_estimate_examples() {
        let fit = LocalFit {
            offset: s(1.0),
            matrix: DMatrix::zeros(1, 1),
            query: s(7.0),
            effective_support: 3,
            bandwidth: 1.0,
        };
        assert_eq!(point_estimate(&fit)[0], 1.0);
        let q = DVector::from_column_slice(&[0.3, -2.0]);
        let fit = LocalFit {
            offset: DVector::zeros(2),
            matrix: DMatrix::identity(2, 2),
            query: q.clone(),
            effective_support: 3,
            bandwidth: 1.0,
        };
        assert_eq!(fit.point_estimate(), q);
    }

    #[test]
    fn bandwidth_doubles_until_supported() {
        let data = affine_pairs(&[0.0, 1.0, 2.0, 10.0], 0.0, 1.0);
        let spec = KernelSpec::new(0.1, 3, 0.0);
        let fit = local_fit(&data, &s(1.0), &spec).unwrap();
        assert!(fit.effective_support >= 3);
        assert!(fit.bandwidth > 1.0);
    }

    #[test]
    fn too_small_dataset_is_usage_error() {
        let data = affine_pairs(&[0.0, 1.0], 0.0, 1.0);
        let spec = KernelSpec::new(1.0, 3, 0.0);
        assert!(matches!(local_fit(&data, &s(0.5), &spec), Err(Error::Usage(_))));
    }

    #[test]
    fn noiseless_affine_band_collapses() {
        let data = affine_pairs(&grid(-2.0, 4.0, 60), 1.0, -0.3);
        let spec = KernelSpec::new(0.8, 3, 0.0);
        let band = bootstrap_band(&data, &s(1.0), &spec, 0.05, 200, 9).unwrap();
        assert!(band.width()[0] < 1e-6);
        let res = Resamples::draw(data.len(), 100, 9);
        let pts: Vec<_> = [0.0, 0.5, 1.0].iter().map(|x| s(*x)).collect();
        let (set, _) = estimation_error_set(&data, &pts, &spec, 0.05, &res, true).unwrap();
        assert!(set.radius()[0] < 1e-6);
    }

    #[test]
    fn band_argument_checks() {
        let data = affine_pairs(&grid(-2.0, 4.0, 60), 1.0, -0.3);
        let spec = KernelSpec::new(0.8, 3, 0.0);
        assert!(bootstrap_band(&data, &s(1.0), &spec, 0.05, 10, 1).is_err());
        assert!(bootstrap_band(&data, &s(1.0), &spec, 1.5, 100, 1).is_err());
    }

    #[test]
    fn resamples_are_order_independent() {
        let a = Resamples::draw(30, 60, 4);
        let b = Resamples::draw(30, 60, 4);
        for r in 0..60 {
            assert_eq!(a.counts(r), b.counts(r));
            assert_eq!(a.counts(r).iter().sum::<u32>(), 30);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-12);
    }

    fn noisy_cuberoot(seed: u64) -> TrainingSet {
        let mut rng = rng_for(seed, 99);
        let pairs: Vec<_> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..4.5);
                (s(x), s(x.cbrt() + rng.random_range(-0.05..0.05)))
            })
            .collect();
        TrainingSet::from_pairs(&pairs).unwrap()
    }

    #[test]
    fn alpha_bands_are_nested() {
        let data = noisy_cuberoot(1);
        let spec = KernelSpec::new(0.5, 3, 1e-8);
        let res = Resamples::draw(data.len(), 200, 17);
        let wide = bootstrap_band_with(&data, &s(2.0), &spec, 0.01, &res).unwrap();
        let narrow = bootstrap_band_with(&data, &s(2.0), &spec, 0.10, &res).unwrap();
        assert!(wide.lower[0] <= narrow.lower[0]);
        assert!(wide.upper[0] >= narrow.upper[0]);
        assert!(wide.lower[0] <= wide.estimate[0] && wide.estimate[0] <= wide.upper[0]);
    }

    #[test]
    fn error_set_hand_example() {
        // two centered bands [-0.02, 0.04] and [-0.05, 0.01] unite to [-0.05, 0.04]
        let data = noisy_cuberoot(2);
        let spec = KernelSpec::new(0.5, 3, 1e-8);
        let res = Resamples::draw(data.len(), 100, 3);
        let pts = vec![s(0.5), s(1.5), s(3.0)];
        let (set, bands) = estimation_error_set(&data, &pts, &spec, 0.05, &res, true).unwrap();
        for b in &bands {
            assert!(b.centered().is_subset_of(&set));
        }
        let lo = bands
            .iter()
            .map(|b| b.lower[0] - b.estimate[0])
            .fold(f64::INFINITY, f64::min);
        let hi = bands
            .iter()
            .map(|b| b.upper[0] - b.estimate[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((set.lower()[0] - lo).abs() < 1e-12);
        assert!((set.upper()[0] - hi).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matches_weighted_least_squares_oracle(
            xs in proptest::collection::vec(-3.0..3.0f64, 4..=10),
            ys in proptest::collection::vec(-3.0..3.0f64, 10),
            q in -1.0..1.0f64,
        ) {
            let pts: Vec<(f64, f64)> = xs.iter().zip(ys.iter()).map(|(x, y)| (*x, *y)).collect();
            let pairs: Vec<_> = pts.iter().map(|(x, y)| (s(*x), s(*y))).collect();
            let data = TrainingSet::from_pairs(&pairs).unwrap();
            let spec = KernelSpec::new(10.0, 2, 0.0);
            let fit = local_fit(&data, &s(q), &spec).unwrap();
            let (a, b) = oracle_wls(&pts, q, 10.0);
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 0.1);
            prop_assert!((fit.offset[0] - a).abs() <= 1e-10 * (1.0 + a.abs()));
            prop_assert!((fit.matrix[(0, 0)] - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }

        #[test]
        fn far_records_have_no_influence(q in -1.0..3.0f64, h in 0.4..1.5f64) {
            let data = noisy_cuberoot(5);
            let spec = KernelSpec::new(h, 3, 1e-8);
            let fit = local_fit(&data, &s(q), &spec).unwrap();
            prop_assume!(fit.bandwidth == h);
            let near = data.without_far_records(&s(q), h);
            let fit2 = local_fit(&near, &s(q), &spec).unwrap();
            prop_assert!((fit.offset[0] - fit2.offset[0]).abs() < 1e-12);
            prop_assert!((fit.matrix[(0, 0)] - fit2.matrix[(0, 0)]).abs() < 1e-12);
        }
    }
}
