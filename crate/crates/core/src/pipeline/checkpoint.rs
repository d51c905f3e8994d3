//! Checkpoints: a JSON manifest (model config + parameter layout) next to a
//! raw little-endian f64 buffer in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::models::{build_model, ModelConfig, ParamSpec, TppModel};

const MANIFEST: &str = "checkpoint.json";
const PARAMS: &str = "params.bin";
const FORMAT: &str = "f64-le";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    model: ModelConfig,
    params: Vec<ParamSpec>,
    num_values: usize,
}

pub fn save_checkpoint(dir: &Path, model: &dyn TppModel) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let store = model.store();
    let manifest = Manifest {
        format: FORMAT.into(),
        model: model.config().clone(),
        params: store.manifest(),
        num_values: store.num_values(),
    };
    let manifest_path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PipelineError::json(&manifest_path, e))?;
    fs::write(&manifest_path, text).map_err(|e| PipelineError::io(&manifest_path, e))?;

    let mut bytes = Vec::with_capacity(store.num_values() * 8);
    for v in store.flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let params_path = dir.join(PARAMS);
    fs::write(&params_path, bytes).map_err(|e| PipelineError::io(&params_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Box<dyn TppModel>, PipelineError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| PipelineError::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| PipelineError::json(&manifest_path, e))?;
    if manifest.format != FORMAT {
        return Err(PipelineError::Checkpoint(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            manifest.format
        )));
    }

    let mut model = build_model(&manifest.model)?;
    let store = model.store();
    if store.manifest() != manifest.params {
        return Err(PipelineError::Checkpoint(
            "parameter layout does not match the model config".into(),
        ));
    }
    if store.num_values() != manifest.num_values {
        return Err(PipelineError::Checkpoint(format!(
            "manifest claims {} values, model has {}",
            manifest.num_values,
            store.num_values()
        )));
    }

    let params_path = dir.join(PARAMS);
    let bytes = fs::read(&params_path).map_err(|e| PipelineError::io(&params_path, e))?;
    if bytes.len() != manifest.num_values * 8 {
        return Err(PipelineError::Checkpoint(format!(
            "{PARAMS} holds {} bytes, expected {}",
            bytes.len(),
            manifest.num_values * 8
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect();
    model.store_mut().set_flat(&flat)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn round_trip_preserves_values_bit_exactly() {
        let mut cfg = ModelConfig::new("rmtpp", 2);
        cfg.hidden_size = 4;
        cfg.type_emb_size = 2;
        cfg.time_emb_size = 2;
        cfg.init_seed = 42;
        let model = build_model(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), model.as_ref()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.model_id(), "rmtpp");
        assert_eq!(loaded.store().flat(), model.store().flat());
        assert_eq!(loaded.config().hidden_size, 4);
    }

    #[test]
    fn truncated_params_file_is_rejected() {
        let cfg = ModelConfig::new("hawkes", 2);
        let model = build_model(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), model.as_ref()).unwrap();
        let bin = dir.path().join(PARAMS);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(dir.path()).err().expect("truncated bin must fail");
        assert!(matches!(err, PipelineError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let model = build_model(&ModelConfig::new("hawkes", 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), model.as_ref()).unwrap();
        // claim a different hidden size in the manifest's model config
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["num_event_types"] = 3.into();
        fs::write(&path, v.to_string()).unwrap();
        let err = load_checkpoint(dir.path()).err().expect("layout mismatch must fail");
        assert!(matches!(err, PipelineError::Checkpoint(_)), "{err}");
    }
}
