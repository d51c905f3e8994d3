//! Point process models behind one trait: a recurrent intensity model, a
//! continuous-time decay RNN, an ODE-state model, an intensity-free mixture
//! model, and a fully parametric Hawkes baseline.

mod nn;
mod params;

pub mod hawkes_mle;
pub mod iftpp;
pub mod nhp;
pub mod odetpp;
pub mod rmtpp;

pub use hawkes_mle::HawkesMleModel;
pub use iftpp::{IntensityFreeModel, MixtureAnchor};
pub use nhp::NeuralDecayModel;
pub use odetpp::OdeTppModel;
pub use params::{Binding, Init, ParamId, ParamSpec, ParamStore};
pub use rmtpp::RecurrentMarkModel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{DataError, EventSequence, PaddedBatch};
use crate::hawkes::HawkesError;
use crate::likelihood::{LikelihoodError, McSamples};
use crate::sampler::{AnchorIntensity, AnchorSource, SamplerError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error("unknown model id '{0}'")]
    UnknownModel(String),
    #[error("value vector has length {got}, store holds {expected}")]
    BadFlatLength { expected: usize, got: usize },
    #[error("batch carries {got} event types, model expects {expected}")]
    TypeCount { expected: usize, got: usize },
    #[error("bad config: {0}")]
    BadConfig(&'static str),
}

fn default_hidden() -> usize {
    32
}
fn default_type_emb() -> usize {
    16
}
fn default_time_emb() -> usize {
    16
}
fn default_layers() -> usize {
    2
}
fn default_mixture() -> usize {
    8
}
fn default_ode_steps() -> usize {
    10
}

/// Hyperparameters shared by every model; fields irrelevant to a given model
/// are simply ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// One of `rmtpp`, `nhp`, `odetpp`, `iftpp`, `hawkes`.
    pub model: String,
    pub num_event_types: usize,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_type_emb")]
    pub type_emb_size: usize,
    #[serde(default = "default_time_emb")]
    pub time_emb_size: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_mixture")]
    pub mixture_components: usize,
    #[serde(default = "default_ode_steps")]
    pub ode_steps: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(model: &str, num_event_types: usize) -> Self {
        let mut cfg = Self {
            model: model.to_string(),
            num_event_types,
            hidden_size: default_hidden(),
            type_emb_size: default_type_emb(),
            time_emb_size: default_time_emb(),
            num_layers: default_layers(),
            mixture_components: default_mixture(),
            ode_steps: default_ode_steps(),
            init_seed: 0,
        };
        if model == "nhp" {
            cfg.hidden_size = 64;
        }
        cfg
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.num_event_types == 0 {
            return Err(ModelError::BadConfig("num_event_types must be at least 1"));
        }
        if self.hidden_size == 0 || self.type_emb_size == 0 || self.time_emb_size == 0 {
            return Err(ModelError::BadConfig("layer sizes must be positive"));
        }
        if self.mixture_components == 0 {
            return Err(ModelError::BadConfig("mixture_components must be positive"));
        }
        if self.ode_steps == 0 {
            return Err(ModelError::BadConfig("ode_steps must be positive"));
        }
        Ok(())
    }
}

/// What a model hands back from one loss evaluation.
pub struct LossOutput {
    /// Scalar negative log-likelihood, normalized per event.
    pub nll: Tensor,
    /// Total log-likelihood of each sequence in the batch.
    pub per_seq_ll: Vec<f64>,
    pub num_events: usize,
}

pub trait TppModel {
    fn model_id(&self) -> &'static str;
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Log-likelihood loss over one padded batch. `samples` supplies the
    /// Monte-Carlo offsets; models with a closed-form integral ignore it.
    fn loss(
        &self,
        tape: &Tape,
        binding: &Binding,
        batch: &PaddedBatch,
        samples: &McSamples,
    ) -> Result<LossOutput, ModelError>;

    /// Freezes the model state after `history` for thinning and prediction.
    /// `probe_horizon` scales the grid probed for intensity bounds by models
    /// that lack an exact one.
    fn anchor_after(
        &self,
        history: &EventSequence,
        probe_horizon: f64,
    ) -> Result<Box<dyn AnchorIntensity>, ModelError>;
}

pub fn build_model(cfg: &ModelConfig) -> Result<Box<dyn TppModel>, ModelError> {
    cfg.validate()?;
    match cfg.model.as_str() {
        "rmtpp" => Ok(Box::new(rmtpp::RecurrentMarkModel::new(cfg.clone())?)),
        "nhp" => Ok(Box::new(nhp::NeuralDecayModel::new(cfg.clone())?)),
        "odetpp" => Ok(Box::new(odetpp::OdeTppModel::new(cfg.clone())?)),
        "iftpp" => Ok(Box::new(iftpp::IntensityFreeModel::new(cfg.clone())?)),
        "hawkes" => Ok(Box::new(hawkes_mle::HawkesMleModel::new(cfg.clone())?)),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// Adapter letting the rollout sampler re-anchor a model after every event.
pub struct ModelAnchorSource<'a> {
    pub model: &'a dyn TppModel,
    pub probe_horizon: f64,
}

impl AnchorSource for ModelAnchorSource<'_> {
    fn num_types(&self) -> usize {
        self.model.config().num_event_types
    }

    fn anchor_after(&self, history: &EventSequence) -> Result<Box<dyn AnchorIntensity>, SamplerError> {
        self.model
            .anchor_after(history, self.probe_horizon)
            .map_err(|e| SamplerError::AnchorFailed(e.to_string()))
    }
}

/// Shared loss plumbing: turns per-sequence log-likelihood into the reported
/// output. Splitting it out keeps every model's `loss` ending identical.
fn finish_loss(ll_per_seq: Tensor, num_events: usize) -> Result<LossOutput, ModelError> {
    let per_seq_ll = ll_per_seq.values().to_vec();
    let nll = ll_per_seq.sum_all().neg().scale(1.0 / num_events.max(1) as f64);
    Ok(LossOutput { nll, per_seq_ll, num_events })
}

fn check_batch(cfg: &ModelConfig, batch: &PaddedBatch) -> Result<(), ModelError> {
    if batch.num_types != cfg.num_event_types {
        return Err(ModelError::TypeCount { expected: cfg.num_event_types, got: batch.num_types });
    }
    Ok(())
}
