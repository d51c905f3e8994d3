//! Temporal point process engine.
//!
//! The crate is organized bottom-up:
//!
//! * [`data`] — event sequences, JSON Lines IO, splits, padded batches
//! * [`hawkes`] — exact multivariate exponential-kernel Hawkes process
//! * [`stats`] — small statistical helpers (KS test against Exp(1))
//! * [`autodiff`] — minimal reverse-mode tape over f64 tensors
//! * [`models`] — neural and classical TPP models behind one trait
//! * [`likelihood`] — Monte-Carlo and closed-form log-likelihood
//! * [`sampler`] — thinning, minimum-Bayes-risk prediction, rollout
//! * [`metrics`] — RMSE, error rate, optimal transport distance
//! * [`pipeline`] — configs, Adam, training loop, evaluation, grid search

pub mod autodiff;
pub mod data;
pub mod hawkes;
pub mod likelihood;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod sampler;
pub mod stats;

pub use data::{Dataset, EventSequence, PaddedBatch};
pub use hawkes::HawkesParams;
pub use models::{build_model, ModelConfig, TppModel};
pub use pipeline::{PipelineError, RunnerConfig};
