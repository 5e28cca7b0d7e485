//! Counterfactual validity under random perturbations: closed forms, Monte
//! Carlo estimation, from-scratch classifiers and an experiment harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod geom;
pub mod harness;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod specfun;
pub mod vcp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Shell64 = geom::Shell<f64>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type LinearModel64 = model::LinearModel<f64>;
pub type MlpModel64 = model::MlpModel<f64>;
pub type Model64 = model::Model<f64>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type AggregateVcp64 = vcp::AggregateVcp<f64>;
