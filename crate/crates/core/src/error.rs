use thiserror::Error;

use crate::sdp::SolverStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// One summand of an outer Minkowski sum has a zero-trace shape; the caller
    /// should take the point-set path instead of the scalar formula.
    #[error("degenerate summand: shape matrix has zero trace")]
    DegenerateSummand,

    /// The outer intersection bound collapsed (`beta <= 0`): the two sets are
    /// inconsistent for this scalar.
    #[error("empty intersection (beta = {beta:e})")]
    EmptyIntersection { beta: f64 },

    #[error("intersection scalar root not bracketed on [0, {q_max:e}]: {detail}")]
    RootNotBracketed { q_max: f64, detail: String },

    #[error("shape repair failed: {0}")]
    ShapeRepair(String),

    #[error("cost specification: {0}")]
    CostSpec(String),

    #[error("sdp assembly: {0}")]
    Assembly(String),

    #[error("control failure: solver returned {0:?}")]
    ControlFailure(SolverStatus),
}
