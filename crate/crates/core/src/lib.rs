//! Outlier exposure workbench: small dense classifiers and autoregressive
//! density models, outlier-exposure fine-tuning, anomaly scores, detection
//! metrics, calibration and a config-driven experiment harness.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod density;
pub mod error;
pub mod exec;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod outlier_gen;
pub mod scoring;

pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::Matrix;
