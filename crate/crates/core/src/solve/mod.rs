//! In-repo solver stack: dense two-phase simplex for LPs, a primal
//! active-set method for convex QPs, and an SQP method with an ℓ1 merit
//! line search for general NLPs.

mod lp;
mod qp;
mod sqp;

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::expr::ExprError;

pub use lp::{solve_lp, LinearProgram};
pub use qp::{solve_qp, solve_qp_from, QpStart, QuadraticProgram};
pub use sqp::{solve_nlp, solve_nlp_with, IterationLog, SqpOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    Stalled,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Optimal => "Optimal",
            Status::Infeasible => "Infeasible",
            Status::Unbounded => "Unbounded",
            Status::IterLimit => "IterLimit",
            Status::Stalled => "Stalled",
        };
        f.write_str(s)
    }
}

/// Multipliers in the sign convention
/// `∇f + Σ ineq_i ∇c_i + Σ eq_j ∇h_j − lower + upper = 0`, with
/// `ineq, lower, upper ≥ 0`. Bound blocks are empty for problems without
/// simple bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: Status,
    pub point: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
}

impl From<ExprError> for SolveError {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::DimensionMismatch { index, got } => SolveError::DimensionMismatch {
                expected: index + 1,
                got,
            },
            ExprError::NonFiniteValue(what) => SolveError::NonFiniteValue(what.to_string()),
        }
    }
}
