//! Monte-Carlo machinery for the intensity integral in the log-likelihood.
//!
//! A sequence with events at `t_0 < .. < t_{I-1}` on `(0, T]` splits into
//! rows: row `j < I` covers `(t_{j-1}, t_j]` (with `t_{-1} = 0`), row `I`
//! covers the tail `(t_{I-1}, T]`. Each model anchors row `j` at its state
//! after the first `j` events, so a padded batch always carries `L + 1` rows
//! per sequence.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{EventSequence, PaddedBatch};
use crate::hawkes::{self, HawkesError, HawkesParams};

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error("sample block sized for {expected} rows, got a batch with {got}")]
    SampleShapeMismatch { expected: usize, got: usize },
    #[error("per-row sample count must be positive")]
    NoSamples,
}

/// Uniform offsets for the integral estimate, `[batch, rows, per_row]` in
/// row-major order with values in `(0, 1]`.
///
/// Draws come in antithetic pairs `(u, 1 - u)`: the estimator stays unbiased
/// and each pair cancels the linear part of the integrand, which tightens
/// the per-sequence variance enough that small sample counts are usable.
#[derive(Debug, Clone)]
pub struct McSamples {
    batch: usize,
    rows: usize,
    per_row: usize,
    eps: Vec<f64>,
}

impl McSamples {
    pub fn draw(
        batch: usize,
        rows: usize,
        per_row: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, LikelihoodError> {
        if per_row == 0 {
            return Err(LikelihoodError::NoSamples);
        }
        let mut eps = vec![0.0; batch * rows * per_row];
        for cell in eps.chunks_mut(per_row) {
            let mut s = 0;
            while s + 1 < cell.len() {
                let u: f64 = rng.random();
                cell[s] = 1.0 - u;
                cell[s + 1] = u.max(f64::MIN_POSITIVE);
                s += 2;
            }
            if s < cell.len() {
                let u: f64 = rng.random();
                cell[s] = 1.0 - u;
            }
        }
        Ok(Self { batch, rows, per_row, eps })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn eps_at(&self, b: usize, row: usize, s: usize) -> f64 {
        self.eps[(b * self.rows + row) * self.per_row + s]
    }

    /// Checks the block was drawn for this batch's row layout.
    pub fn matches(&self, batch: &PaddedBatch) -> Result<(), LikelihoodError> {
        let rows = batch.max_len + 1;
        if self.batch != batch.batch_size || self.rows != rows {
            return Err(LikelihoodError::SampleShapeMismatch { expected: self.rows, got: rows });
        }
        Ok(())
    }
}

/// Per-row interval lengths as a flat `[B, L+1]` buffer: gaps between
/// consecutive events, then the tail up to the observation window end, then
/// zeros on padding.
pub fn interval_lens(batch: &PaddedBatch) -> Vec<f64> {
    let b_size = batch.batch_size;
    let max_len = batch.max_len;
    let rows = max_len + 1;
    let mut lens = vec![0.0; b_size * rows];
    for b in 0..b_size {
        let seq_len = batch.seq_lens[b];
        for j in 0..seq_len {
            lens[b * rows + j] = batch.dtimes[batch.idx(b, j)];
        }
        let last_time = if seq_len == 0 { 0.0 } else { batch.times[batch.idx(b, seq_len - 1)] };
        lens[b * rows + seq_len] = (batch.t_ends[b] - last_time).max(0.0);
    }
    lens
}

/// Constant tensors derived from a padded batch that every model's loss
/// needs: `lens [B, L+1]`, the event-endpoint gap `event_dt [B, L+1]`, a mask
/// flagging rows that end in a real event, and that event's one-hot type
/// `[B, L+1, K]`.
pub struct BatchTensors {
    pub lens: Tensor,
    pub event_dt: Tensor,
    pub event_mask: Tensor,
    pub event_onehot: Tensor,
}

pub fn batch_tensors(
    tape: &Tape,
    batch: &PaddedBatch,
) -> Result<BatchTensors, LikelihoodError> {
    let b_size = batch.batch_size;
    let max_len = batch.max_len;
    let rows = max_len + 1;
    let num_types = batch.num_types;
    let lens = interval_lens(batch);

    let mut event_dt = vec![0.0; b_size * rows];
    let mut event_mask = vec![0.0; b_size * rows];
    let mut event_onehot = vec![0.0; b_size * rows * num_types];
    for b in 0..b_size {
        for j in 0..batch.seq_lens[b] {
            event_dt[b * rows + j] = batch.dtimes[batch.idx(b, j)];
            event_mask[b * rows + j] = 1.0;
            let k = batch.types[batch.idx(b, j)];
            event_onehot[(b * rows + j) * num_types + k] = 1.0;
        }
    }
    Ok(BatchTensors {
        lens: tape.constant(lens, &[b_size, rows])?,
        event_dt: tape.constant(event_dt, &[b_size, rows])?,
        event_mask: tape.constant(event_mask, &[b_size, rows])?,
        event_onehot: tape.constant(event_onehot, &[b_size, rows, num_types])?,
    })
}

/// Sample offsets as a `[B, L+1, S]` constant of absolute gaps from each
/// row's anchor: `eps * len`.
pub fn sample_dts(
    tape: &Tape,
    batch: &PaddedBatch,
    samples: &McSamples,
) -> Result<Tensor, LikelihoodError> {
    samples.matches(batch)?;
    let lens = interval_lens(batch);
    let s = samples.per_row();
    let rows = samples.rows();
    let mut dts = vec![0.0; lens.len() * s];
    for b in 0..samples.batch() {
        for j in 0..rows {
            let len = lens[b * rows + j];
            for k in 0..s {
                dts[(b * rows + j) * s + k] = samples.eps_at(b, j, k) * len;
            }
        }
    }
    Ok(tape.constant(dts, &[samples.batch(), rows, s])?)
}

/// Turns per-sample total intensities `[B, L+1, S]` into a per-sequence
/// integral estimate `[B]`: mean over samples, weighted by row length.
pub fn mc_compensator(lens: &Tensor, total_at_samples: &Tensor) -> Result<Tensor, LikelihoodError> {
    let per_row = total_at_samples.mean_axis(2)?; // [B, L+1]
    Ok(per_row.mul(lens)?.sum_last()?)
}

/// Scalar Monte-Carlo estimate of a Hawkes sequence log-likelihood with the
/// same row/antithetic scheme the tensor path uses. The event term is exact;
/// only the integral is estimated.
pub fn hawkes_mc_loglik(
    params: &HawkesParams,
    seq: &EventSequence,
    per_row: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64, LikelihoodError> {
    if per_row == 0 {
        return Err(LikelihoodError::NoSamples);
    }
    let k = params.num_types();
    let event_term: f64 = hawkes::event_intensities(params, seq)?
        .iter()
        .map(|lam| lam.ln())
        .sum();

    // Decay state: excitation[target][source] just after the anchor event.
    let mut excitation = vec![0.0; k * k];
    let mut integral = 0.0;
    let times = seq.times();
    let types = seq.types();
    let rows = times.len() + 1;
    let mut draw = |cell: &mut [f64]| {
        let mut s = 0;
        while s + 1 < cell.len() {
            let u: f64 = rng.random();
            cell[s] = 1.0 - u;
            cell[s + 1] = u.max(f64::MIN_POSITIVE);
            s += 2;
        }
        if s < cell.len() {
            let u: f64 = rng.random();
            cell[s] = 1.0 - u;
        }
    };
    let mut eps = vec![0.0; per_row];
    for j in 0..rows {
        let row_start = if j == 0 { 0.0 } else { times[j - 1] };
        let row_end = if j < times.len() { times[j] } else { seq.t_end() };
        let len = (row_end - row_start).max(0.0);
        if len > 0.0 {
            draw(&mut eps);
            let mut acc = 0.0;
            for &e in &eps {
                let dt = e * len;
                let mut total = 0.0;
                for target in 0..k {
                    let mut lam = params.mu()[target];
                    for source in 0..k {
                        let beta = params.beta(target, source);
                        lam += excitation[target * k + source] * (-beta * dt).exp();
                    }
                    total += lam;
                }
                acc += total;
            }
            integral += len * acc / per_row as f64;
        }
        if j < times.len() {
            // Decay the state across the row, then add the row-ending event.
            for target in 0..k {
                for source in 0..k {
                    let beta = params.beta(target, source);
                    excitation[target * k + source] *= (-beta * len).exp();
                }
                let src = types[j];
                excitation[target * k + src] +=
                    params.alpha(target, src) * params.beta(target, src);
            }
        }
    }
    Ok(event_term - integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pad_batch;
    use crate::sampler::{stream_rng, StreamDomain};
    use approx::assert_relative_eq;

    fn seq(times: &[f64], types: &[usize], t_end: f64) -> EventSequence {
        EventSequence::new(times.to_vec(), types.to_vec(), t_end, 0).unwrap()
    }

    #[test]
    fn antithetic_pairs_mirror_each_other() {
        let mut rng = stream_rng(3, StreamDomain::McSamples, 0, 0);
        let s = McSamples::draw(2, 3, 4, &mut rng).unwrap();
        for b in 0..2 {
            for row in 0..3 {
                for pair in 0..2 {
                    let lo = s.eps_at(b, row, 2 * pair);
                    let hi = s.eps_at(b, row, 2 * pair + 1);
                    assert_relative_eq!(lo + hi, 1.0, max_relative = 1e-12);
                    assert!(lo > 0.0 && lo <= 1.0 && hi > 0.0 && hi <= 1.0);
                }
            }
        }
    }

    #[test]
    fn odd_sample_count_still_lands_in_unit_interval() {
        let mut rng = stream_rng(4, StreamDomain::McSamples, 0, 0);
        let s = McSamples::draw(1, 1, 5, &mut rng).unwrap();
        for k in 0..5 {
            let e = s.eps_at(0, 0, k);
            assert!(e > 0.0 && e <= 1.0);
        }
    }

    #[test]
    fn interval_lens_cover_the_window() {
        let a = seq(&[1.0, 3.0], &[0, 0], 5.0);
        let b = seq(&[2.0], &[0], 5.0);
        let batch = pad_batch(&[&a, &b], 1).unwrap();
        let lens = interval_lens(&batch);
        // rows = max_len + 1 = 3
        assert_eq!(lens, vec![1.0, 2.0, 2.0, 2.0, 3.0, 0.0]);
        for b_idx in 0..2 {
            let total: f64 = lens[b_idx * 3..(b_idx + 1) * 3].iter().sum();
            assert_relative_eq!(total, 5.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn empty_sequence_is_all_tail() {
        // padding keeps at least one event slot, so rows = 2
        let a = seq(&[], &[], 4.0);
        let batch = pad_batch(&[&a], 1).unwrap();
        assert_eq!(interval_lens(&batch), vec![4.0, 0.0]);
    }

    #[test]
    fn batch_tensors_mask_padding() {
        let a = seq(&[1.0, 3.0], &[0, 1], 5.0);
        let b = seq(&[2.0], &[1], 5.0);
        let batch = pad_batch(&[&a, &b], 2).unwrap();
        let tape = Tape::new();
        let bt = batch_tensors(&tape, &batch).unwrap();
        assert_eq!(bt.event_mask.values(), &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(bt.event_dt.values(), &[1.0, 2.0, 0.0, 2.0, 0.0, 0.0]);
        // second sequence's single event has type 1
        assert_eq!(bt.event_onehot.values()[2 * 3 * 0 + 6..2 * 3 * 0 + 8], [0.0, 1.0]);
        assert_eq!(bt.lens.shape(), &[2, 3]);
    }

    #[test]
    fn mc_compensator_is_exact_for_constant_intensity() {
        let a = seq(&[1.0, 3.0], &[0, 0], 5.0);
        let batch = pad_batch(&[&a], 1).unwrap();
        let tape = Tape::new();
        let bt = batch_tensors(&tape, &batch).unwrap();
        // two samples per row, constant total intensity 2.0
        let total = tape.constant(vec![2.0; 3 * 2], &[1, 3, 2]).unwrap();
        let integral = mc_compensator(&bt.lens, &total).unwrap();
        assert_relative_eq!(integral.values()[0], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn hawkes_mc_matches_closed_form_tightly() {
        let params = HawkesParams::new(
            vec![0.2, 0.3],
            vec![0.2, 0.5, 0.1, 0.4],
            vec![1.0, 2.0, 3.0, 0.5],
        )
        .unwrap();
        let s = seq(&[0.5, 1.2, 2.0], &[1, 0, 1], 2.5);
        let exact = hawkes::loglik(&params, &s).unwrap();
        let mut rng = stream_rng(11, StreamDomain::McSamples, 0, 0);
        let mc = hawkes_mc_loglik(&params, &s, 4000, &mut rng).unwrap();
        assert_relative_eq!(mc, exact, max_relative = 2e-3);
    }

    #[test]
    fn sample_dts_scale_offsets_by_row_length() {
        let a = seq(&[2.0], &[0], 3.0);
        let batch = pad_batch(&[&a], 1).unwrap();
        let mut rng = stream_rng(5, StreamDomain::McSamples, 0, 0);
        let samples = McSamples::draw(1, 2, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let dts = sample_dts(&tape, &batch, &samples).unwrap();
        assert_eq!(dts.shape(), &[1, 2, 2]);
        for j in 0..2 {
            let len = if j == 0 { 2.0 } else { 1.0 };
            for s in 0..2 {
                assert_relative_eq!(
                    dts.values()[j * 2 + s],
                    samples.eps_at(0, j, s) * len,
                    max_relative = 1e-12
                );
            }
        }
    }
}
