//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min 1/2 z'Hz + g'z` subject to `A_eq z = b_eq` and `A_in z >= b_in`
//! with `H` positive definite. The dual method starts from the unconstrained
//! minimizer and adds violated constraints one at a time, so infeasibility
//! shows up as a constraint that cannot be added by any finite step.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    /// `1/2 z'Hz + g'z`.
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    /// Non-negative multipliers of the inequality rows.
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_dim("QP hessian rows", n, self.hessian.nrows())?;
        check_dim("QP hessian cols", n, self.hessian.ncols())?;
        check_dim("QP equality cols", n, self.eq_matrix.ncols())?;
        check_dim("QP equality rows", self.eq_matrix.nrows(), self.eq_rhs.len())?;
        check_dim("QP inequality cols", n, self.ineq_matrix.ncols())?;
        check_dim("QP inequality rows", self.ineq_matrix.nrows(), self.ineq_rhs.len())?;
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z)
    }

    /// Largest constraint violation at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = (&self.eq_matrix * z - &self.eq_rhs).amax();
        let ineq = (&self.ineq_rhs - &self.ineq_matrix * z)
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        eq.max(ineq)
    }

    /// Max of stationarity, primal violation, dual sign and complementarity
    /// residuals.
    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        let z = &sol.z;
        let stat = &self.hessian * z + &self.gradient
            - self.eq_matrix.transpose() * &sol.eq_multipliers
            - self.ineq_matrix.transpose() * &sol.ineq_multipliers;
        let slack = &self.ineq_matrix * z - &self.ineq_rhs;
        let comp = slack
            .iter()
            .zip(sol.ineq_multipliers.iter())
            .fold(0.0f64, |m, (s, l)| m.max((s * l).abs()));
        let dual = sol
            .ineq_multipliers
            .iter()
            .fold(0.0f64, |m, l| m.max(-l));
        stat.amax().max(self.max_violation(z)).max(comp).max(dual)
    }
}

struct Workspace {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
}

impl Workspace {
    /// `J' np`.
    fn project(&self, np: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    /// Primal step direction from the inactive part of `d`.
    fn primal_direction(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in iq..self.n {
                s += self.j[(i, k)] * d[k];
            }
            z[i] = s;
        }
        z
    }

    /// Dual step direction `R^{-1} d[0..iq]`.
    fn dual_direction(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in (i + 1)..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    /// Givens-rotates `d` so that only its first `iq + 1` entries are non-zero
    /// and appends it as a new column of `R`. Returns false on linear
    /// dependence.
    fn add_constraint(&mut self, d: &mut DVector<f64>, iq: &mut usize) -> bool {
        let n = self.n;
        let mut jj = n;
        while jj > *iq + 1 {
            jj -= 1;
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jj)] = xny * (t1 + self.j[(k, jj - 1)]) - t2;
            }
        }
        *iq += 1;
        for i in 0..*iq {
            self.r[(i, *iq - 1)] = d[i];
        }
        let diag = d[*iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Removes active constraint `l` and restores the triangular form of `R`.
    fn delete_constraint(
        &mut self,
        active: &mut [isize],
        u: &mut DVector<f64>,
        meq: usize,
        iq: &mut usize,
        l: isize,
    ) {
        let n = self.n;
        let qq = (meq..*iq).find(|&i| active[i] == l).expect("constraint is active");
        for i in qq..(*iq - 1) {
            active[i] = active[i + 1];
            u[i] = u[i + 1];
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        active[*iq - 1] = active[*iq];
        u[*iq - 1] = u[*iq];
        active[*iq] = 0;
        u[*iq] = 0.0;
        for k in 0..*iq {
            self.r[(k, *iq - 1)] = 0.0;
        }
        *iq -= 1;
        if *iq == 0 {
            return;
        }
        for jj in qq..*iq {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (jj + 1)..*iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = xny * (t1 + self.r[(jj, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = t1 * cc + t2 * ss;
                self.j[(k, jj + 1)] = xny * (self.j[(k, jj)] + t1) - t2;
            }
        }
    }
}

/// Solves the QP. Linearly dependent equalities and a non-convex Hessian are
/// errors; an empty feasible set is reported through [`QpStatus::Infeasible`].
pub fn solve_qp(p: &QpProblem, max_iterations: usize) -> Result<QpSolution> {
    p.validate()?;
    let n = p.num_vars();
    let meq = p.eq_matrix.nrows();
    let mi = p.ineq_matrix.nrows();

    let chol = p
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solver("QP Hessian is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
    let c1 = p.hessian.trace();
    let mut ws = Workspace {
        n,
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
    };
    let c2 = ws.j.trace();

    // unconstrained minimizer
    let mut x = -(&ws.j * ws.j.tr_mul(&p.gradient));

    let total = meq + mi;
    let mut active: Vec<isize> = vec![0; total + 1];
    let mut u = DVector::<f64>::zeros(total + 1);
    let mut iq = 0usize;

    let infeasible = |x: DVector<f64>, iters: usize| QpSolution {
        status: QpStatus::Infeasible,
        objective: f64::INFINITY,
        z: x,
        eq_multipliers: DVector::zeros(meq),
        ineq_multipliers: DVector::zeros(mi),
        iterations: iters,
    };

    for i in 0..meq {
        let np: DVector<f64> = p.eq_matrix.row(i).transpose();
        let mut d = ws.project(&np);
        let z = ws.primal_direction(&d, iq);
        let r = ws.dual_direction(&d, iq);
        let znp = z.dot(&np);
        let t2 = if z.norm_squared() > f64::EPSILON {
            (p.eq_rhs[i] - np.dot(&x)) / znp
        } else {
            0.0
        };
        x += &z * t2;
        u[iq] = t2;
        for k in 0..iq {
            u[k] -= t2 * r[k];
        }
        active[i] = -(i as isize) - 1;
        if !ws.add_constraint(&mut d, &mut iq) {
            if (np.dot(&x) - p.eq_rhs[i]).abs() > 1e-9 * (1.0 + p.eq_rhs[i].abs()) {
                return Ok(infeasible(x, 0));
            }
            return Err(Error::Solver("linearly dependent equality constraints".into()));
        }
    }

    let mut inactive: Vec<isize> = (0..mi as isize).collect();
    let mut excluded = vec![false; mi];
    let mut iterations = 0usize;
    let tol = (mi as f64) * f64::EPSILON * c1 * c2 * 100.0;

    'outer: loop {
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::Solver(format!(
                "active-set iteration cap {max_iterations} reached"
            )));
        }
        for &a in &active[meq..iq] {
            inactive[a as usize] = -1;
        }
        let mut slack = DVector::zeros(mi);
        let mut psi = 0.0;
        for i in 0..mi {
            excluded[i] = false;
            let s = p.ineq_matrix.row(i).dot(&x.transpose()) - p.ineq_rhs[i];
            slack[i] = s;
            psi += s.min(0.0);
        }
        if psi.abs() <= tol.max(1e-300) {
            break;
        }
        let u_old = u.clone();
        let active_old = active.clone();
        let x_old = x.clone();

        'select: loop {
            let mut worst = 0.0;
            let mut ip = usize::MAX;
            for i in 0..mi {
                if slack[i] < worst && inactive[i] != -1 && !excluded[i] {
                    worst = slack[i];
                    ip = i;
                }
            }
            if ip == usize::MAX {
                break 'outer;
            }
            let np: DVector<f64> = p.ineq_matrix.row(ip).transpose();
            u[iq] = 0.0;
            active[iq] = ip as isize;

            loop {
                let mut d = ws.project(&np);
                let z = ws.primal_direction(&d, iq);
                let r = ws.dual_direction(&d, iq);

                let mut t1 = f64::INFINITY;
                let mut l: isize = -1;
                for k in meq..iq {
                    if r[k] > 0.0 && u[k] / r[k] < t1 {
                        t1 = u[k] / r[k];
                        l = active[k];
                    }
                }
                let znp = z.dot(&np);
                let t2 = if z.norm_squared() > f64::EPSILON {
                    -slack[ip] / znp
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Ok(infeasible(x, iterations));
                }
                if !t2.is_finite() {
                    // dual-only step
                    for k in 0..iq {
                        u[k] -= t * r[k];
                    }
                    u[iq] += t;
                    inactive[l as usize] = l;
                    ws.delete_constraint(&mut active, &mut u, meq, &mut iq, l);
                    continue;
                }
                x += &z * t;
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                if (t - t2).abs() <= f64::EPSILON * t2.abs().max(1.0) {
                    // full step
                    if !ws.add_constraint(&mut d, &mut iq) {
                        excluded[ip] = true;
                        ws.delete_constraint(&mut active, &mut u, meq, &mut iq, ip as isize);
                        for (i, v) in inactive.iter_mut().enumerate() {
                            *v = i as isize;
                        }
                        for i in meq..iq {
                            active[i] = active_old[i];
                            u[i] = u_old[i];
                            inactive[active[i] as usize] = -1;
                        }
                        x = x_old.clone();
                        continue 'select;
                    }
                    inactive[ip] = -1;
                    continue 'outer;
                }
                // partial step
                inactive[l as usize] = l;
                ws.delete_constraint(&mut active, &mut u, meq, &mut iq, l);
                slack[ip] = np.dot(&x) - p.ineq_rhs[ip];
            }
        }
    }

    let mut eq_multipliers = DVector::zeros(meq);
    let mut ineq_multipliers = DVector::zeros(mi);
    for k in 0..iq {
        let a = active[k];
        if a < 0 {
            eq_multipliers[(-a - 1) as usize] = u[k];
        } else {
            ineq_multipliers[a as usize] = u[k];
        }
    }
    Ok(QpSolution {
        status: QpStatus::Optimal,
        objective: p.objective(&x),
        z: x,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}
