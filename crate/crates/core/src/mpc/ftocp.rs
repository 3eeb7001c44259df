//! Finite-time optimal control problem over a time-varying affine model.
//!
//! The nominal states are eliminated through the dynamics, leaving a dense QP
//! in the inputs (and the initial nominal state when it is free).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem, QpStatus};
use crate::error::{check_dim, Error, Result};
use crate::linearizer::AffineModel;
use crate::set_algebra::BoxSet;

/// Constraint slack below which a problem counts as feasible.
pub const INFEASIBILITY_TOL: f64 = 1e-7;
/// Residual bound for accepted optimal solutions.
pub const OPTIMALITY_TOL: f64 = 1e-6;

const MAX_QP_ITERATIONS: usize = 10_000;

/// Quadratic weights of the stage and terminal costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub state: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub terminal: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(state: DMatrix<f64>, input: DMatrix<f64>, terminal: DMatrix<f64>) -> Result<Self> {
        let n = state.nrows();
        check_dim("state weight cols", n, state.ncols())?;
        check_dim("terminal weight rows", n, terminal.nrows())?;
        check_dim("terminal weight cols", n, terminal.ncols())?;
        check_dim("input weight cols", input.nrows(), input.ncols())?;
        for (name, m) in [("state", &state), ("terminal", &terminal)] {
            if !is_symmetric(m) || m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::usage(format!("{name} weight must be symmetric PSD")));
            }
        }
        if !is_symmetric(&input) || input.clone().cholesky().is_none() {
            return Err(Error::usage("input weight must be symmetric positive definite"));
        }
        Ok(Self {
            state,
            input,
            terminal,
        })
    }

    /// Scalar weights times identity.
    pub fn diagonal(n: usize, m: usize, q: f64, r: f64, q_terminal: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(n, n) * q,
            DMatrix::identity(m, m) * r,
            DMatrix::identity(n, n) * q_terminal,
        )
    }

    /// `(x - x_f)' Q (x - x_f) + (u - u_f)' R (u - u_f)`.
    pub fn stage_cost(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_goal: &DVector<f64>,
        u_goal: &DVector<f64>,
    ) -> f64 {
        let dx = x - x_goal;
        let du = u - u_goal;
        dx.dot(&(&self.state * &dx)) + du.dot(&(&self.input * &du))
    }

    pub fn terminal_cost(&self, x: &DVector<f64>, x_goal: &DVector<f64>) -> f64 {
        let dx = x - x_goal;
        dx.dot(&(&self.terminal * &dx))
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
}

/// How the first nominal state relates to the measured state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// `x̄_0 = x_t`.
    Fixed(DVector<f64>),
    /// `x̄_0` free inside the given box (the measured state plus an error set).
    Within(BoxSet),
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Fixed(x) => x.len(),
            InitialState::Within(b) => b.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtocpProblem {
    /// One model per prediction step.
    pub models: Vec<AffineModel>,
    /// Constraint on `x̄_k` for `k < T`; `None` leaves the step unconstrained.
    pub state_sets: Vec<Option<BoxSet>>,
    pub terminal_set: BoxSet,
    pub input_set: BoxSet,
    pub initial: InitialState,
    pub x_goal: DVector<f64>,
    pub u_goal: DVector<f64>,
    pub weights: CostWeights,
    /// Set when some constraint set is empty; the solver is then skipped.
    pub infeasible_reason: Option<String>,
}

/// Variable and constraint counts of the uncondensed formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FtocpDimensions {
    pub state_vars: usize,
    pub input_vars: usize,
    /// Initial condition plus dynamics rows.
    pub equalities: usize,
    /// Two-sided box rows (each counted once).
    pub box_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtocpSolution {
    pub feasible: bool,
    pub u_seq: Vec<DVector<f64>>,
    pub x_seq: Vec<DVector<f64>>,
    pub cost: f64,
    pub stats: SolverStats,
}

impl FtocpSolution {
    fn infeasible() -> Self {
        Self {
            feasible: false,
            u_seq: Vec::new(),
            x_seq: Vec::new(),
            cost: f64::INFINITY,
            stats: SolverStats::default(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_ftocp(
    models: Vec<AffineModel>,
    state_sets: Vec<Option<BoxSet>>,
    terminal_set: BoxSet,
    input_set: BoxSet,
    initial: InitialState,
    x_goal: DVector<f64>,
    u_goal: DVector<f64>,
    weights: CostWeights,
) -> Result<FtocpProblem> {
    let horizon = models.len();
    if horizon == 0 {
        return Err(Error::usage("FTOCP horizon must be at least 1"));
    }
    check_dim("FTOCP state sets", horizon, state_sets.len())?;
    let n = initial.dim();
    let m = input_set.dim();
    for model in &models {
        check_dim("FTOCP model state", n, model.state_dim())?;
        check_dim("FTOCP model input", m, model.input_dim())?;
    }
    for s in state_sets.iter().flatten() {
        check_dim("FTOCP state set", n, s.dim())?;
    }
    check_dim("FTOCP terminal set", n, terminal_set.dim())?;
    check_dim("FTOCP goal state", n, x_goal.len())?;
    check_dim("FTOCP goal input", m, u_goal.len())?;
    check_dim("FTOCP state weight", n, weights.state.nrows())?;
    check_dim("FTOCP input weight", m, weights.input.nrows())?;

    let mut infeasible_reason = None;
    if let Some(k) = state_sets
        .iter()
        .position(|s| s.as_ref().is_some_and(BoxSet::is_empty))
    {
        infeasible_reason = Some(format!("tightened state set {k} is empty"));
    } else if terminal_set.is_empty() {
        infeasible_reason = Some("tightened terminal set is empty".into());
    } else if input_set.is_empty() {
        infeasible_reason = Some("input set is empty".into());
    } else if matches!(&initial, InitialState::Within(b) if b.is_empty()) {
        infeasible_reason = Some("initial state set is empty".into());
    }
    Ok(FtocpProblem {
        models,
        state_sets,
        terminal_set,
        input_set,
        initial,
        x_goal,
        u_goal,
        weights,
        infeasible_reason,
    })
}

/// Affine map `x_k = c_k + G_k z` for every nominal state.
struct Condensed {
    offsets: Vec<DVector<f64>>,
    maps: Vec<DMatrix<f64>>,
    free_initial: usize,
}

impl FtocpProblem {
    pub fn horizon(&self) -> usize {
        self.models.len()
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_set.dim()
    }

    pub fn dimensions(&self) -> FtocpDimensions {
        let (n, m, t) = (self.state_dim(), self.input_dim(), self.horizon());
        let initial_rows = match self.initial {
            InitialState::Fixed(_) => n,
            InitialState::Within(_) => 0,
        };
        let state_boxes = self.state_sets.iter().flatten().count() * n;
        let initial_box = if initial_rows == 0 { n } else { 0 };
        FtocpDimensions {
            state_vars: n * (t + 1),
            input_vars: m * t,
            equalities: initial_rows + n * t,
            box_rows: state_boxes + n + m * t + initial_box,
        }
    }

    fn condense(&self) -> Condensed {
        let (n, m, t) = (self.state_dim(), self.input_dim(), self.horizon());
        let (c0, free_initial) = match &self.initial {
            InitialState::Fixed(x) => (x.clone(), 0),
            InitialState::Within(_) => (DVector::zeros(n), n),
        };
        let nz = free_initial + m * t;
        let mut g0 = DMatrix::zeros(n, nz);
        for i in 0..free_initial {
            g0[(i, i)] = 1.0;
        }
        let mut offsets = vec![c0];
        let mut maps = vec![g0];
        for (k, model) in self.models.iter().enumerate() {
            let c = &model.offset + &model.matrix * &offsets[k];
            let mut g = &model.matrix * &maps[k];
            let col = free_initial + k * m;
            g.columns_mut(col, m).copy_from(&model.input_matrix);
            offsets.push(c);
            maps.push(g);
        }
        Condensed {
            offsets,
            maps,
            free_initial,
        }
    }

    /// Condensed QP; `None` when a constant constraint row is already violated.
    pub fn to_qp(&self) -> Option<QpProblem> {
        let (m, t) = (self.input_dim(), self.horizon());
        let cz = self.condense();
        let nz = cz.free_initial + m * t;
        let w = &self.weights;

        let mut h = DMatrix::zeros(nz, nz);
        let mut g = DVector::zeros(nz);
        for k in 0..=t {
            let q = if k == t { &w.terminal } else { &w.state };
            let gk = &cz.maps[k];
            let qg = q * gk;
            h += gk.transpose() * &qg;
            g += qg.tr_mul(&(&cz.offsets[k] - &self.x_goal));
        }
        let ru = &w.input * &self.u_goal;
        for k in 0..t {
            let col = cz.free_initial + k * m;
            let mut blk = h.view_mut((col, col), (m, m));
            blk += &w.input;
            let mut gs = g.rows_mut(col, m);
            gs -= &ru;
        }
        h *= 2.0;
        g *= 2.0;
        // a PSD state weight can leave the free initial state without curvature
        if cz.free_initial > 0 && h.clone().cholesky().is_none() {
            let ridge = 1e-10 * (1.0 + h.diagonal().amax());
            for i in 0..cz.free_initial {
                h[(i, i)] += ridge;
            }
        }

        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut push_box = |map: &DMatrix<f64>, offset: &DVector<f64>, set: &BoxSet| -> bool {
            let lo = set.lower();
            let hi = set.upper();
            for i in 0..set.dim() {
                let row: DVector<f64> = map.row(i).transpose();
                if row.amax() == 0.0 {
                    if offset[i] < lo[i] - INFEASIBILITY_TOL || offset[i] > hi[i] + INFEASIBILITY_TOL {
                        return false;
                    }
                    continue;
                }
                rows.push(row.clone());
                rhs.push(lo[i] - offset[i] - INFEASIBILITY_TOL);
                rows.push(-row);
                rhs.push(offset[i] - hi[i] - INFEASIBILITY_TOL);
            }
            true
        };
        for (k, set) in self.state_sets.iter().enumerate() {
            if let Some(s) = set {
                if !push_box(&cz.maps[k], &cz.offsets[k], s) {
                    return None;
                }
            }
        }
        if !push_box(&cz.maps[t], &cz.offsets[t], &self.terminal_set) {
            return None;
        }
        if let InitialState::Within(b) = &self.initial {
            if !push_box(&cz.maps[0], &cz.offsets[0], b) {
                return None;
            }
        }
        let zero = DVector::zeros(m);
        for k in 0..t {
            let mut sel = DMatrix::zeros(m, nz);
            let col = cz.free_initial + k * m;
            for i in 0..m {
                sel[(i, col + i)] = 1.0;
            }
            push_box(&sel, &zero, &self.input_set);
        }

        let mut ineq_matrix = DMatrix::zeros(rows.len(), nz);
        for (r, row) in rows.iter().enumerate() {
            ineq_matrix.set_row(r, &row.transpose());
        }
        Some(QpProblem {
            hessian: h,
            gradient: g,
            eq_matrix: DMatrix::zeros(0, nz),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs: DVector::from_vec(rhs),
        })
    }

    /// Stage costs over `x_seq[..T]` plus the terminal cost.
    pub fn trajectory_cost(&self, x_seq: &[DVector<f64>], u_seq: &[DVector<f64>]) -> f64 {
        let w = &self.weights;
        let stages: f64 = x_seq
            .iter()
            .zip(u_seq)
            .map(|(x, u)| w.stage_cost(x, u, &self.x_goal, &self.u_goal))
            .sum();
        stages + w.terminal_cost(x_seq.last().expect("non-empty"), &self.x_goal)
    }

    /// Largest violation of dynamics and constraints by a candidate solution,
    /// evaluated directly on the uncondensed formulation.
    pub fn max_violation(&self, x_seq: &[DVector<f64>], u_seq: &[DVector<f64>]) -> f64 {
        let outside = |s: &BoxSet, v: &DVector<f64>| -> f64 {
            let lo = s.lower();
            let hi = s.upper();
            (0..v.len())
                .map(|i| (lo[i] - v[i]).max(v[i] - hi[i]).max(0.0))
                .fold(0.0, f64::max)
        };
        let mut worst: f64 = match &self.initial {
            InitialState::Fixed(x) => (x - &x_seq[0]).amax(),
            InitialState::Within(b) => outside(b, &x_seq[0]),
        };
        for (k, model) in self.models.iter().enumerate() {
            let next = model.predict(&x_seq[k], &u_seq[k]);
            worst = worst.max((next - &x_seq[k + 1]).amax());
            if let Some(s) = &self.state_sets[k] {
                worst = worst.max(outside(s, &x_seq[k]));
            }
            worst = worst.max(outside(&self.input_set, &u_seq[k]));
        }
        worst.max(outside(&self.terminal_set, &x_seq[self.horizon()]))
    }
}

pub fn solve_ftocp(p: &FtocpProblem) -> Result<FtocpSolution> {
    if p.infeasible_reason.is_some() {
        return Ok(FtocpSolution::infeasible());
    }
    let Some(qp) = p.to_qp() else {
        return Ok(FtocpSolution::infeasible());
    };
    let sol = solve_qp(&qp, MAX_QP_ITERATIONS)?;
    if sol.status == QpStatus::Infeasible {
        return Ok(FtocpSolution::infeasible());
    }
    let kkt = qp.kkt_residual(&sol);

    let (m, t) = (p.input_dim(), p.horizon());
    let cz = p.condense();
    let x_seq: Vec<DVector<f64>> = (0..=t).map(|k| &cz.offsets[k] + &cz.maps[k] * &sol.z).collect();
    let u_seq: Vec<DVector<f64>> = (0..t)
        .map(|k| sol.z.rows(cz.free_initial + k * m, m).into_owned())
        .collect();
    let violation = p.max_violation(&x_seq, &u_seq);
    if violation > OPTIMALITY_TOL {
        return Err(Error::Solver(format!(
            "solution violates constraints by {violation:e}"
        )));
    }
    let scale = 1.0 + qp.hessian.amax() + qp.gradient.amax();
    if kkt > OPTIMALITY_TOL * scale {
        return Err(Error::Solver(format!("KKT residual {kkt:e} above tolerance")));
    }
    Ok(FtocpSolution {
        feasible: true,
        cost: p.trajectory_cost(&x_seq, &u_seq),
        u_seq,
        x_seq,
        stats: SolverStats {
            iterations: sol.iterations,
            kkt_residual: kkt,
        },
    })
}

/// First planned input.
pub fn mpc_policy(sol: &FtocpSolution) -> Result<DVector<f64>> {
    if !sol.feasible {
        return Err(Error::usage("MPC policy of an infeasible solution"));
    }
    sol.u_seq
        .first()
        .cloned()
        .ok_or_else(|| Error::usage("solution has no inputs"))
}

/// Writes the condensed QP as labelled dense blocks.
pub fn write_qp_text<W: Write>(mut out: W, qp: &QpProblem) -> Result<()> {
    let mut emit = |name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
        writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
        for r in 0..m.nrows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    };
    let as_col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    (|| -> std::io::Result<()> {
        emit("H", &qp.hessian)?;
        emit("g", &as_col(&qp.gradient))?;
        emit("A_eq", &qp.eq_matrix)?;
        emit("b_eq", &as_col(&qp.eq_rhs))?;
        emit("A_in", &qp.ineq_matrix)?;
        emit("b_in", &as_col(&qp.ineq_rhs))?;
        Ok(())
    })()
    .map_err(|e| Error::io("qp dump", e))
}
