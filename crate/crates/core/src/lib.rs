//! Hybrid adaptive control of soft robots.
//!
//! An offline-trained stacked LSTM inverse model is blended with an online
//! 2x2 kinematics-matrix controller, and both are exercised against a family
//! of simulated planar soft robots with configurable unit-to-unit variance.
//! A 1-DOF pseudo-rigid-body arm with a constant-curvature controller serves
//! as the model-based comparison.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod kincontrol;
pub mod lstm;
pub mod par;
pub mod plant;

pub use error::{Error, Result};
