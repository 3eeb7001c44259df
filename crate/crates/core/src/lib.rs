//! Learning-based robust MPC for partially unknown nonlinear systems.

pub mod control_loop;
pub mod error;
pub mod error_tube;
pub mod estimator;
pub mod harness;
pub mod linearizer;
pub mod mpc;
pub mod plant;
pub mod set_algebra;

pub use error::{Error, Result};
