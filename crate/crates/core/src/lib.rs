//! Variance-aware network utility maximization.
//!
//! Users receive a reward `r_i(t)` every slot subject to a time-varying convex
//! constraint `c_t(r) <= 0`. Each user's quality of experience is the mean
//! reward minus a penalty on its temporal variance, and a concave fairness
//! utility is applied on top:
//!
//! ```text
//! phi_T(r) = sum_i U_i^E( m^T(r_i) - U_i^V(Var^T(r_i)) )
//! ```
//!
//! The crate provides
//!
//! * [`avr`]: the online allocator, which solves a weighted concave quadratic
//!   program per slot ([`slot_solver`]) and tracks running mean/variance
//!   estimates with clipped `1/t` updates;
//! * [`offline`]: the full-horizon oracle that knows the realized constraint
//!   sequence in advance;
//! * [`stationary`]: the stationary program, its fixed point `theta_pi`, the
//!   mean-field ODE and its Lyapunov function;
//! * [`harness`]: configuration, scenario library and experiment runner used by
//!   the `vanum` binary.

pub mod avr;
pub mod constraints;
mod error;
pub mod harness;
mod kkt;
pub mod metrics;
pub mod offline;
mod pooled;
pub mod slot_solver;
pub mod stationary;
pub mod utilities;

pub use error::{Error, Result};
pub use slot_solver::Theta;
