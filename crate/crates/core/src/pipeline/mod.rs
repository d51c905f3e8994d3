//! Experiment runner: configuration, Adam training with early stopping,
//! checkpoints, evaluation metrics, grid search and multi-model benchmarks.

mod adam;
mod benchmark;
mod checkpoint;
mod config;
mod evaluate;
mod gridsearch;
mod train;

pub use adam::{clip_grad_norm, Adam};
pub use benchmark::{run_benchmark, BenchmarkEntry, BenchmarkFile, BenchmarkReport};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{
    apply_override, apply_override_value, load_experiment, runner_from_value, DataConfig,
    EvalConfig, RunnerConfig, TrainConfig,
};
pub use evaluate::{
    eval_avg_loglik, horizon_otd, next_event_metrics, HorizonOtdReport, LoglikReport,
    NextEventReport,
};
pub use gridsearch::{run_grid, CellResult, GridFile, GridReport};
pub use train::{train, EpochLog, TrainReport};

use std::path::PathBuf;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::hawkes::HawkesError;
use crate::likelihood::LikelihoodError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::sampler::SamplerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad config: {0}")]
    Config(String),
    #[error("override {path:?}: {reason}")]
    BadOverride { path: String, reason: String },
    #[error("unknown experiment id {0:?}")]
    UnknownExperiment(String),
    #[error("dataset {0:?} has no sequences")]
    EmptyDataset(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json { path: path.into(), source }
    }
}
