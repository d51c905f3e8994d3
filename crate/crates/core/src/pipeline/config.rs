//! Runner configuration: JSON files, experiment maps and dotted-path
//! overrides (`train.learning_rate=0.01`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::models::ModelConfig;

/// Paths to the three JSON Lines splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: String,
    pub dev: String,
    pub test: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Monte-Carlo samples per interval row while training.
    pub mc_samples: usize,
    /// Samples for the per-epoch dev evaluation (fixed streams).
    pub dev_mc_samples: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            mc_samples: 1,
            dev_mc_samples: 10,
            patience: 5,
            max_grad_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    /// Monte-Carlo samples per interval row for held-out likelihood.
    pub mc_samples: usize,
    /// Thinning draws averaged into each time prediction.
    pub mbr_samples: usize,
    /// Probe window for intensity bounds; `0` picks ten mean gaps.
    pub probe_horizon: f64,
    pub otd_del_cost: f64,
    /// Fraction of each window kept as history for rollouts.
    pub rollout_cut: f64,
    pub max_rollout_events: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            mc_samples: 10,
            mbr_samples: 100,
            probe_horizon: 0.0,
            otd_del_cost: 1.0,
            rollout_cut: 0.5,
            max_rollout_events: 1000,
            seed: 0,
        }
    }
}

/// Everything one experiment needs: the model plus training and evaluation
/// settings, and optionally the dataset paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Deserialize)]
struct ExperimentFile {
    experiments: BTreeMap<String, Value>,
}

/// Parses `raw` as JSON when possible, falling back to a plain string, and
/// stores it at the dotted `path` inside `root` (objects are created along
/// the way).
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), PipelineError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    apply_override_value(root, path, value)
}

pub fn apply_override_value(root: &mut Value, path: &str, value: Value) -> Result<(), PipelineError> {
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(PipelineError::BadOverride {
            path: path.to_string(),
            reason: "empty segment".into(),
        });
    }
    let mut cur = root;
    let mut segments = path.split('.').peekable();
    while let Some(seg) = segments.next() {
        let obj = cur.as_object_mut().ok_or_else(|| PipelineError::BadOverride {
            path: path.to_string(),
            reason: format!("{seg:?} is not inside an object"),
        })?;
        if segments.peek().is_none() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

/// Deserializes a runner config from a JSON value after applying
/// `key=value` overrides with dotted paths.
pub fn runner_from_value(
    mut value: Value,
    overrides: &[(String, String)],
) -> Result<RunnerConfig, PipelineError> {
    for (path, raw) in overrides {
        apply_override(&mut value, path, raw)?;
    }
    serde_json::from_value(value)
        .map_err(|e| PipelineError::Config(format!("runner config: {e}")))
}

/// Loads a config file. The file either holds one runner config directly or
/// an `{"experiments": {id: config}}` map selected by `experiment_id`.
pub fn load_experiment(
    path: &Path,
    experiment_id: Option<&str>,
    overrides: &[(String, String)],
) -> Result<RunnerConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e))?;
    let selected = match experiment_id {
        None => value,
        Some(id) => {
            let file: ExperimentFile =
                serde_json::from_value(value).map_err(|e| PipelineError::json(path, e))?;
            file.experiments
                .get(id)
                .cloned()
                .ok_or_else(|| PipelineError::UnknownExperiment(id.to_string()))?
        }
    };
    runner_from_value(selected, overrides)
}
