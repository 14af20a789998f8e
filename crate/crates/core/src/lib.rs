//! Statistical downscaling of ensemble precipitation forecasts with a
//! delta-initialized convolutional network, baselines and verification tools.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod net;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;
