//! Cartesian hyperparameter search ranked by dev log-likelihood.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{apply_override_value, runner_from_value};
use super::train::train;
use super::PipelineError;
use crate::data::Dataset;
use crate::models::build_model;

/// `base` is a runner config; every `grid` key is a dotted path into it with
/// the candidate values to sweep.
#[derive(Debug, Clone, Deserialize)]
pub struct GridFile {
    pub base: Value,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub assignment: BTreeMap<String, Value>,
    pub dev_ll: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub cells: Vec<CellResult>,
    /// Index of the winning cell; `None` when every cell failed.
    pub best: Option<usize>,
}

fn assignment_key(a: &BTreeMap<String, Value>) -> String {
    a.iter().map(|(k, v)| format!("{k}={v};")).collect()
}

/// Trains one model per grid cell. A failing cell is recorded, not fatal;
/// ties on dev likelihood resolve to the lexicographically smallest
/// assignment so reruns pick the same winner.
pub fn run_grid(
    file: &GridFile,
    train_ds: &Dataset,
    dev_ds: &Dataset,
) -> Result<GridReport, PipelineError> {
    let keys: Vec<&String> = file.grid.keys().collect();
    let sizes: Vec<usize> = keys.iter().map(|k| file.grid[*k].len()).collect();
    if let Some(pos) = sizes.iter().position(|&s| s == 0) {
        return Err(PipelineError::Config(format!(
            "grid axis {:?} has no values",
            keys[pos]
        )));
    }
    let total: usize = sizes.iter().product();
    let mut cells = Vec::with_capacity(total);
    let mut idx = vec![0usize; keys.len()];
    for _ in 0..total {
        let mut assignment = BTreeMap::new();
        let mut value = file.base.clone();
        let mut prep: Result<(), PipelineError> = Ok(());
        for (ki, key) in keys.iter().enumerate() {
            let v = file.grid[*key][idx[ki]].clone();
            assignment.insert((*key).clone(), v.clone());
            if prep.is_ok() {
                prep = apply_override_value(&mut value, key, v);
            }
        }
        let outcome = prep.and_then(|()| run_cell(value, train_ds, dev_ds));
        cells.push(match outcome {
            Ok((dev_ll, best_epoch)) => CellResult {
                assignment,
                dev_ll: Some(dev_ll),
                best_epoch: Some(best_epoch),
                error: None,
            },
            Err(e) => CellResult {
                assignment,
                dev_ll: None,
                best_epoch: None,
                error: Some(e.to_string()),
            },
        });
        for ki in (0..keys.len()).rev() {
            idx[ki] += 1;
            if idx[ki] < sizes[ki] {
                break;
            }
            idx[ki] = 0;
        }
    }

    let mut best: Option<usize> = None;
    for i in 0..cells.len() {
        let Some(ll) = cells[i].dev_ll else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let b_ll = cells[b].dev_ll.expect("best always holds a scored cell");
                let better = ll > b_ll
                    || (ll == b_ll
                        && assignment_key(&cells[i].assignment)
                            < assignment_key(&cells[b].assignment));
                if better {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    Ok(GridReport { cells, best })
}

fn run_cell(
    value: Value,
    train_ds: &Dataset,
    dev_ds: &Dataset,
) -> Result<(f64, usize), PipelineError> {
    let cfg = runner_from_value(value, &[])?;
    let mut model = build_model(&cfg.model)?;
    let report = train(model.as_mut(), train_ds, dev_ds, &cfg.train, None)?;
    Ok((report.best_dev_ll, report.best_epoch))
}
