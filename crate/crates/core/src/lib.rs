//! Single-level reformulations of smooth bilevel programs.
//!
//! The crate turns a bilevel program into either its KKT-based MPEC
//! reformulation or its Wolfe-dual reformulation (WDP), solves those with an
//! in-repo SQP stack, drives the shrinking-parameter relaxation scheme, and
//! certifies candidate points (KKT, S-stationarity, MFCQ, abnormal
//! multipliers, duality gaps).

pub mod bench;
pub mod certify;
pub mod expr;
pub mod linalg;
pub mod model;
pub mod reform;
pub mod relax;
pub mod solve;

pub use expr::Expr;
