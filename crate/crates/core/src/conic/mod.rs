//! Conic-program representation, interior-point backend and the
//! outer-approximation loop for scalar convex constraints.

mod backend;
mod embed;
mod outer;
mod program;

use thiserror::Error;

pub use backend::{
    check_infeasibility_certificate, solve_conic, standard_form, ConeKind, SolveOutcome,
    SolveStats, SolveStatus,
};
pub use embed::{embed_quadratic, ComplexVarVec};
pub use outer::{
    outer_approx_solve, OuterApproxReport, ScalarConvexConstraint, DEFAULT_CUT_TOLERANCE,
    DEFAULT_MAX_ROUNDS,
};
pub use program::{AffineExpr, ConicProgram, Constraint, ConstraintId, Var, VarBlock};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("tolerance must lie in (0, 1e-2], got {0}")]
    InvalidTolerance(f64),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
}
