//! One-dimensional blood flow on vessel networks with a kinetic finite-volume
//! scheme, plus patient calibration of arterial stiffness, peripheral
//! resistance and a lumped liver model.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod calibration;
pub mod cohort;
pub mod config;
pub mod error;
pub mod exec;
pub mod junction;
pub mod kinetic;
pub mod liver;
pub mod network;
pub mod pipeline;
pub mod synth;
pub mod verification;
pub mod vessel;

pub use error::{Error, Result};
