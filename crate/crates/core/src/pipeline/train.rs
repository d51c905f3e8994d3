//! Mini-batch Adam training with shuffled epochs, per-epoch dev evaluation
//! on frozen sample streams, early stopping and best-checkpoint restore.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::adam::{clip_grad_norm, Adam};
use super::config::TrainConfig;
use super::evaluate::eval_avg_loglik;
use super::PipelineError;
use crate::autodiff::Tape;
use crate::data::{pad_batch, Dataset, EventSequence};
use crate::likelihood::McSamples;
use crate::models::TppModel;
use crate::sampler::{stream_rng, StreamDomain};

/// Dev evaluation inside `train` keys sample streams with this value; the
/// per-epoch training streams use `epoch + 1`, so they never collide.
const DEV_STREAM: u64 = 0;

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_ll_per_event: f64,
    pub grad_norm_mean: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_ll: f64,
    pub stopped_early: bool,
}

/// Trains in place, leaving the parameters at the best dev epoch. When
/// `log_path` is set, one JSON line per epoch is appended there.
pub fn train(
    model: &mut dyn TppModel,
    train_ds: &Dataset,
    dev_ds: &Dataset,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainReport, PipelineError> {
    if train_ds.sequences.is_empty() {
        return Err(PipelineError::EmptyDataset(train_ds.name.clone()));
    }
    if dev_ds.sequences.is_empty() {
        return Err(PipelineError::EmptyDataset(dev_ds.name.clone()));
    }
    let num_types = model.config().num_event_types;
    for ds in [train_ds, dev_ds] {
        if ds.num_types != num_types {
            return Err(PipelineError::Config(format!(
                "dataset {:?} has {} event types, model expects {num_types}",
                ds.name, ds.num_types
            )));
        }
    }
    if cfg.max_epochs == 0 {
        return Err(PipelineError::Config("max_epochs must be at least 1".into()));
    }

    let mut opt = Adam::new(model.store().num_values(), cfg.learning_rate);
    let batch_size = cfg.batch_size.max(1);
    let mut log_file = match log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| PipelineError::io(p, e))?,
        ),
        None => None,
    };

    let mut best_flat = model.store().flat();
    let mut best_dev_ll = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_ds.sequences.len()).collect();
        let mut shuffle_rng = stream_rng(cfg.seed, StreamDomain::Shuffle, epoch as u64, 0);
        order.shuffle(&mut shuffle_rng);

        let mut nll_weighted = 0.0;
        let mut events = 0usize;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for (bi, idx_chunk) in order.chunks(batch_size).enumerate() {
            let refs: Vec<&EventSequence> =
                idx_chunk.iter().map(|&i| &train_ds.sequences[i]).collect();
            let batch = pad_batch(&refs, num_types)?;
            let mut rng =
                stream_rng(cfg.seed, StreamDomain::McSamples, epoch as u64 + 1, bi as u64);
            let samples = McSamples::draw(
                batch.batch_size,
                batch.max_len + 1,
                cfg.mc_samples.max(1),
                &mut rng,
            )?;
            let tape = Tape::new();
            let binding = model.store().bind(&tape, true)?;
            let out = model.loss(&tape, &binding, &batch, &samples)?;
            let loss = out.nll.scalar_value();
            if !loss.is_finite() {
                return Err(PipelineError::Diverged { epoch, batch: bi, loss });
            }
            out.nll.backward()?;
            let mut grads = binding.grads_flat();
            norm_sum += clip_grad_norm(&mut grads, cfg.max_grad_norm);
            let mut flat = model.store().flat();
            opt.step(&mut flat, &grads)?;
            model.store_mut().set_flat(&flat)?;

            nll_weighted += loss * out.num_events as f64;
            events += out.num_events;
            batches += 1;
        }

        let dev = eval_avg_loglik(
            model,
            dev_ds,
            batch_size,
            cfg.dev_mc_samples.max(1),
            cfg.seed,
            DEV_STREAM,
        )?;
        let entry = EpochLog {
            epoch,
            train_nll: nll_weighted / events.max(1) as f64,
            dev_ll_per_event: dev.ll_per_event,
            grad_norm_mean: norm_sum / batches.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&entry)
                .map_err(|e| PipelineError::Config(format!("log entry: {e}")))?;
            writeln!(f, "{line}").map_err(|e| {
                PipelineError::io(log_path.expect("log_file implies log_path"), e)
            })?;
        }
        epochs.push(entry);

        if dev.ll_per_event > best_dev_ll {
            best_dev_ll = dev.ll_per_event;
            best_epoch = epoch;
            best_flat = model.store().flat();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                stopped_early = true;
                break;
            }
        }
    }

    model.store_mut().set_flat(&best_flat)?;
    Ok(TrainReport { epochs, best_epoch, best_dev_ll, stopped_early })
}
