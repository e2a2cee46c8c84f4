//! Attentional-copula transformer for multivariate time series.
//!
//! This crate is `no_std` (it needs `alloc`). It holds the numerical core:
//! a reverse-mode tensor engine, the encoder, the flow marginals, the
//! attentional copula, training, scoring rules, the backtesting harness and
//! the interpolation benchmark. File formats and the command line live in
//! the `tactis` crate.
#![no_std]
// `Var::add` and friends are fallible (shape errors), so they cannot be the
// operator traits; `!(x > 0.0)` style guards are deliberate NaN rejections.
#![allow(
    clippy::should_implement_trait,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod backtest;
pub mod copula;
pub mod data;
pub mod encoder;
mod error;
pub mod flow;
pub mod interp;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::ModelError;
