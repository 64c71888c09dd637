//! Multi-base-station positioning from MIMO channel fingerprints with
//! score-based generative models.
//!
//! Each base station (BS) gets its own conditional score network trained on
//! its channel fingerprints. At inference the per-BS noise predictions are
//! summed inside a deterministic reverse sampler, so adding a BS needs no
//! retraining.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod config;
pub mod consistency;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fingerprint;
pub mod geometry;
pub mod infer;
pub mod model;
pub mod nn;
pub mod persist;
pub mod plot;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
