//! Deformation-aware multimodal fusion for 3-D brain volumes.
//!
//! Pairs an intensity volume with the log-Jacobian map of its deformation
//! field, encodes both with small 3-D CNNs, fuses the token sequences with
//! attention, and evaluates the classifier with stratified cross-validation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod jacobian;
pub mod metrics;
pub mod nn;
pub mod selfcheck;
pub mod synthgen;
pub mod tensor;
pub mod training;
pub mod volume_io;

pub use error::{Error, Result};
