//! Symbolic regression with the Transformation-Interaction-Rational
//! representation.
//!
//! Models have the form `g(p(x) / (1 + q(x)))` where `p` and `q` are affine
//! combinations of transformed interaction terms. Coefficients are fitted by
//! linear least squares after inverting `g`, and the structure is evolved by
//! either a single-objective GA or NSGA-II over accuracy and size.

pub mod expr;
pub mod fitting;
pub mod genetics;
pub mod harness;
pub mod metrics;
pub mod moo;
pub mod search;

pub use expr::{InvFn, ItExpr, Term, TirModel, TirShape, TransFn};
