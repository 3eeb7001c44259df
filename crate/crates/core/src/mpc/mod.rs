//! Robust MPC problem construction and the QP backend.

pub mod ftocp;
pub mod qp;

pub use ftocp::{
    build_ftocp, mpc_policy, solve_ftocp, write_qp_text, CostWeights, FtocpDimensions, FtocpProblem,
    FtocpSolution, InitialState, SolverStats, INFEASIBILITY_TOL, OPTIMALITY_TOL,
};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
