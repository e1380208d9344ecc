//! Physics-informed neural surrogates for the coupled generalized nonlinear
//! Schrödinger system, trained with residual-based adaptive refinement of the
//! collocation set, plus exact soliton references and coefficient
//! identification from data.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod inverse;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod oracle;
pub mod physics;
pub mod precision;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
