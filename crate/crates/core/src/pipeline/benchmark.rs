//! Trains several models on one dataset and writes a leaderboard.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{runner_from_value, DataConfig};
use super::evaluate::{eval_avg_loglik, horizon_otd, next_event_metrics};
use super::train::train;
use super::{checkpoint, PipelineError};
use crate::data::{load_dataset, DataSchema, Dataset};
use crate::models::build_model;

/// One shared dataset, one runner config per contender. Each entry in
/// `models` is a full runner config; its `data` block is ignored in favour
/// of the shared one.
#[derive(Debug, Clone, Deserialize)]
pub struct BenchmarkFile {
    pub data: DataConfig,
    pub models: Vec<Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkEntry {
    pub model: String,
    pub dev_ll_per_event: f64,
    pub test_ll_per_event: f64,
    pub rmse: f64,
    pub error_rate: f64,
    pub mean_otd: f64,
    pub best_epoch: usize,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    /// Sorted by test log-likelihood, best first.
    pub entries: Vec<BenchmarkEntry>,
}

fn load_splits(data: &DataConfig) -> Result<(Dataset, Dataset, Dataset), PipelineError> {
    let schema = DataSchema::default();
    let train_ds = load_dataset(&data.train, &schema)?;
    let dev_ds = load_dataset(&data.dev, &schema)?;
    let test_ds = load_dataset(&data.test, &schema)?;
    // A split may miss the highest type id; line them up on the widest one.
    let k = train_ds
        .num_types
        .max(dev_ds.num_types)
        .max(test_ds.num_types);
    let widen = |ds: Dataset| -> Result<Dataset, PipelineError> {
        if ds.num_types == k {
            return Ok(ds);
        }
        Ok(Dataset::new(ds.name, k, ds.sequences)?)
    };
    Ok((widen(train_ds)?, widen(dev_ds)?, widen(test_ds)?))
}

/// Labels duplicate model ids `id`, `id.2`, `id.3`, ... in file order.
fn labels(models: &[Value]) -> Vec<String> {
    let ids: Vec<String> = models
        .iter()
        .map(|v| {
            v.get("model")
                .and_then(|m| m.get("model"))
                .and_then(Value::as_str)
                .unwrap_or("model")
                .to_string()
        })
        .collect();
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let nth = ids[..i].iter().filter(|p| *p == id).count();
            if nth == 0 {
                id.clone()
            } else {
                format!("{id}.{}", nth + 1)
            }
        })
        .collect()
}

fn rank_desc(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => b.partial_cmp(&a).expect("both finite or infinite"),
    }
}

fn write_leaderboard(report: &BenchmarkReport, out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut csv = String::from(
        "model,test_ll_per_event,dev_ll_per_event,rmse,error_rate,mean_otd,best_epoch,train_seconds\n",
    );
    for e in &report.entries {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3}\n",
            e.model,
            e.test_ll_per_event,
            e.dev_ll_per_event,
            e.rmse,
            e.error_rate,
            e.mean_otd,
            e.best_epoch,
            e.train_seconds
        ));
    }
    let csv_path = out_dir.join("leaderboard.csv");
    fs::write(&csv_path, csv).map_err(|e| PipelineError::io(&csv_path, e))?;
    let json_path = out_dir.join("benchmark.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, text).map_err(|e| PipelineError::io(&json_path, e))?;
    Ok(())
}

/// Trains and scores every contender on the shared splits. With an output
/// directory, writes `leaderboard.csv`, `benchmark.json` and one checkpoint
/// per model under its leaderboard label.
pub fn run_benchmark(
    file: &BenchmarkFile,
    out_dir: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<BenchmarkReport, PipelineError> {
    if file.models.is_empty() {
        return Err(PipelineError::Config("benchmark lists no models".into()));
    }
    let (train_ds, dev_ds, test_ds) = load_splits(&file.data)?;
    let names = labels(&file.models);
    let mut entries = Vec::with_capacity(file.models.len());
    for (value, label) in file.models.iter().zip(&names) {
        let cfg = runner_from_value(value.clone(), overrides)?;
        let mut model = build_model(&cfg.model)?;
        let started = Instant::now();
        let trained = train(model.as_mut(), &train_ds, &dev_ds, &cfg.train, None)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let ll = eval_avg_loglik(
            model.as_ref(),
            &test_ds,
            cfg.eval.batch_size,
            cfg.eval.mc_samples,
            cfg.eval.seed,
            0,
        )?;
        let next = next_event_metrics(model.as_ref(), &test_ds, &cfg.eval)?;
        let otd = horizon_otd(model.as_ref(), &test_ds, &cfg.eval)?;
        if let Some(dir) = out_dir {
            checkpoint::save_checkpoint(&dir.join(label), model.as_ref())?;
        }
        entries.push(BenchmarkEntry {
            model: label.clone(),
            dev_ll_per_event: trained.best_dev_ll,
            test_ll_per_event: ll.ll_per_event,
            rmse: next.rmse,
            error_rate: next.error_rate,
            mean_otd: otd.mean_otd,
            best_epoch: trained.best_epoch,
            train_seconds,
        });
    }
    entries.sort_by(|a, b| rank_desc(a.test_ll_per_event, b.test_ll_per_event));
    let report = BenchmarkReport { dataset: test_ds.name.clone(), entries };
    if let Some(dir) = out_dir {
        write_leaderboard(&report, dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_dataset;
    use crate::hawkes::{self, GenerateConfig, HawkesParams};
    use crate::pipeline::checkpoint::load_checkpoint;
    use serde_json::json;

    fn write_splits(dir: &Path) -> DataConfig {
        let params = HawkesParams::univariate(0.4, 0.5, 1.5).unwrap();
        let seqs = hawkes::generate(
            &params,
            &GenerateConfig { t_end: 25.0, num_sequences: 16, seed: 31 },
        )
        .unwrap();
        let (tr, dv, te) = crate::data::split_dataset(seqs, (0.5, 0.25, 0.25), 3).unwrap();
        let cfg = DataConfig {
            train: dir.join("train.jsonl").to_string_lossy().into_owned(),
            dev: dir.join("dev.jsonl").to_string_lossy().into_owned(),
            test: dir.join("test.jsonl").to_string_lossy().into_owned(),
        };
        for (path, seqs) in [(&cfg.train, tr), (&cfg.dev, dv), (&cfg.test, te)] {
            let ds = Dataset::new("toy", 1, seqs).unwrap();
            write_dataset(&ds, path).unwrap();
        }
        cfg
    }

    fn fast_eval() -> Value {
        json!({
            "batch_size": 64,
            "mc_samples": 2,
            "mbr_samples": 5,
            "max_rollout_events": 200
        })
    }

    #[test]
    fn ranks_models_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let file = BenchmarkFile {
            data: write_splits(dir.path()),
            models: vec![
                json!({
                    "model": {"model": "hawkes", "num_event_types": 1},
                    "train": {"max_epochs": 3, "learning_rate": 0.05},
                    "eval": fast_eval(),
                }),
                json!({
                    "model": {
                        "model": "rmtpp", "num_event_types": 1,
                        "hidden_size": 8, "type_emb_size": 4, "time_emb_size": 4
                    },
                    "train": {"max_epochs": 2},
                    "eval": fast_eval(),
                }),
            ],
        };
        let out = dir.path().join("bench");
        let report = run_benchmark(&file, Some(&out), &[]).unwrap();

        assert_eq!(report.entries.len(), 2);
        assert!(
            report.entries[0].test_ll_per_event >= report.entries[1].test_ll_per_event,
            "leaderboard must be sorted best first"
        );
        for e in &report.entries {
            assert!(e.test_ll_per_event.is_finite());
            assert!(e.rmse.is_finite() && e.rmse >= 0.0);
            assert!((0.0..=1.0).contains(&e.error_rate));
            assert!(e.mean_otd.is_finite() && e.mean_otd >= 0.0);
            // every contender leaves a loadable checkpoint behind
            load_checkpoint(&out.join(&e.model)).unwrap();
        }

        let csv = fs::read_to_string(out.join("leaderboard.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("model,test_ll_per_event"));
        let json_text = fs::read_to_string(out.join("benchmark.json")).unwrap();
        let parsed: Value = serde_json::from_str(&json_text).unwrap();
        assert_eq!(parsed["entries"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn duplicate_model_ids_get_distinct_labels() {
        let models = vec![
            json!({"model": {"model": "hawkes"}}),
            json!({"model": {"model": "hawkes"}}),
            json!({"model": {"model": "rmtpp"}}),
        ];
        assert_eq!(labels(&models), vec!["hawkes", "hawkes.2", "rmtpp"]);
    }

    #[test]
    fn empty_model_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = BenchmarkFile { data: write_splits(dir.path()), models: vec![] };
        let err = run_benchmark(&file, None, &[]).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
    }
}
