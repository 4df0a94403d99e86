//! Uncertainty quantification toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod conjugate;
pub mod conformal;
pub mod datasets;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod evidential;
pub mod gp;
pub mod harness;
pub mod infer;
pub mod interval;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod special;

pub use error::{Result, UqError};
pub use interval::Interval;
pub use rng::RngStream;
