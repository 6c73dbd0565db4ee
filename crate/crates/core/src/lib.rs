//! Vision-to-sensor knowledge distillation for human activity recognition.
//!
//! Accelerometer windows are encoded as Gramian Angular Summation Field images
//! ([`encoding`]); a small student network learns from a frozen teacher with
//! the DASK objective ([`losses`]), all differentiated by a small reverse-mode
//! engine ([`autodiff`]).

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoding;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod relations;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Result, VskdError};
pub use tensor::Tensor;
