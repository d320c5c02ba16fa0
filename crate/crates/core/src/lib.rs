//! Sparse and switching infinite-horizon optimal control.
//!
//! Pointwise minimization of the nonconvex `ℓ^{p,q}` penalty, a
//! semi-Lagrangian HJB solver for closed-loop feedback, and an open-loop
//! forward-backward sweep for linear dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod penalty;
pub mod pmp;

pub use error::{Error, Result};
