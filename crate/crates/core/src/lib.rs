//! Implicit, A-stable gradient-flow solvers for constrained least squares on
//! the nonnegative orthant, the probability simplex, boxes and the Stiefel
//! manifold, with reference baselines, diagnostics and a benchmark harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod krylov;
pub mod linalg;
pub mod pos_box;
pub mod problem;
pub mod reparam;
pub mod simplex;
pub mod stiefel;

pub use config::{IterateTrace, SolveStatus, SolverConfig, SolverReport, TraceEntry};
pub use error::{GravidyError, Result};
pub use problem::{
    LeastSquaresProblem, LinearObjective, Objective, QuadraticObjective, StiefelQuadraticProblem,
};
