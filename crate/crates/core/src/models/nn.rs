//! Small shared pieces: event embeddings, a tanh RNN scan, linear layers and
//! a fixed-step RK4 integrator, all expressed through the autodiff tensors.

use super::params::{Binding, ParamId};
use super::ModelError;
use crate::autodiff::{Tape, Tensor};
use crate::data::PaddedBatch;

/// One-hot encoding of every padded slot, `[B*L, K+1]`; padding uses the
/// extra slot `K`.
pub(super) fn one_hot_padded(tape: &Tape, batch: &PaddedBatch) -> Result<Tensor, ModelError> {
    let slots = batch.num_types + 1;
    let n = batch.batch_size * batch.max_len;
    let mut buf = vec![0.0; n * slots];
    for (i, &k) in batch.types.iter().enumerate() {
        buf[i * slots + k] = 1.0;
    }
    Ok(tape.constant(buf, &[n, slots])?)
}

/// Sinusoidal features of the inter-event gaps, `[n, dim]`. Frequencies fall
/// geometrically so both sub-unit and multi-hundred gaps stay resolvable.
pub(super) fn time_features(tape: &Tape, gaps: &[f64], dim: usize) -> Result<Tensor, ModelError> {
    let mut buf = vec![0.0; gaps.len() * dim];
    for (i, &dt) in gaps.iter().enumerate() {
        for j in 0..dim {
            let freq = 10_000f64.powf(-((2 * (j / 2)) as f64) / dim as f64);
            let angle = dt * freq;
            buf[i * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok(tape.constant(buf, &[gaps.len(), dim])?)
}

/// Per-event inputs for a scan: type embedding concatenated with time
/// features of the preceding gap, `[B, L, type_emb + time_dim]`.
pub(super) fn event_inputs(
    tape: &Tape,
    binding: &Binding,
    type_emb: ParamId,
    batch: &PaddedBatch,
    time_dim: usize,
) -> Result<Tensor, ModelError> {
    let onehot = one_hot_padded(tape, batch)?;
    let emb = onehot.matmul(binding.get(type_emb))?;
    let tf = time_features(tape, &batch.dtimes, time_dim)?;
    let x = Tensor::concat_last(&[emb, tf])?;
    let width = x.shape()[1];
    Ok(x.reshape(&[batch.batch_size, batch.max_len, width])?)
}

pub(super) fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, ModelError> {
    Ok(x.matmul(w)?.add(b)?)
}

/// Tanh RNN over the padded steps. Returns anchor states `[B, L+1, D]`:
/// row 0 is the (learned) initial state, row `j > 0` the state just after
/// event `j-1`. Padded steps produce junk rows that callers mask out.
pub(super) fn rnn_anchor_states(
    inputs: &Tensor,
    h0: &Tensor,
    wx: &Tensor,
    wh: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, ModelError> {
    let b = inputs.shape()[0];
    let l = inputs.shape()[1];
    let d = h0.shape()[0];
    let mut h = h0.reshape(&[1, d])?.broadcast_to(&[b, d])?;
    let mut states = Vec::with_capacity(l + 1);
    states.push(h.clone());
    for i in 0..l {
        let x = inputs.select(1, i)?;
        h = linear(&x, wx, bias)?.add(&h.matmul(wh)?)?.tanh();
        states.push(h.clone());
    }
    Ok(Tensor::stack(&states, 1)?)
}

/// Classic fourth-order Runge-Kutta for an autonomous field, `steps` equal
/// substeps across `dt_total`. `dt_total` must broadcast against the state
/// (e.g. `[B, 1]` against `[B, D]`).
pub(super) fn rk4(
    h0: &Tensor,
    dt_total: &Tensor,
    steps: usize,
    field: &dyn Fn(&Tensor) -> Result<Tensor, ModelError>,
) -> Result<Tensor, ModelError> {
    let dt = dt_total.scale(1.0 / steps.max(1) as f64);
    let half = dt.scale(0.5);
    let sixth = dt.scale(1.0 / 6.0);
    let mut h = h0.clone();
    for _ in 0..steps.max(1) {
        let k1 = field(&h)?;
        let k2 = field(&h.add(&half.mul(&k1)?)?)?;
        let k3 = field(&h.add(&half.mul(&k2)?)?)?;
        let k4 = field(&h.add(&dt.mul(&k3)?)?)?;
        let combined = k1.add(&k2.scale(2.0))?.add(&k3.scale(2.0))?.add(&k4)?;
        h = h.add(&sixth.mul(&combined)?)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{pad_batch, EventSequence};
    use approx::assert_relative_eq;

    #[test]
    fn one_hot_marks_padding_slot() {
        let a = EventSequence::new(vec![1.0], vec![0], 2.0, 0).unwrap();
        let b = EventSequence::new(vec![0.5, 1.5], vec![1, 0], 2.0, 1).unwrap();
        let batch = pad_batch(&[&a, &b], 2).unwrap();
        let tape = Tape::new();
        let oh = one_hot_padded(&tape, &batch).unwrap();
        assert_eq!(oh.shape(), &[4, 3]);
        assert_eq!(oh.values()[..3], [1.0, 0.0, 0.0], "event of type 0");
        assert_eq!(oh.values()[3..6], [0.0, 0.0, 1.0], "padding slot");
    }

    #[test]
    fn time_features_alternate_sin_cos() {
        let tape = Tape::new();
        let tf = time_features(&tape, &[0.0, 1.5], 4).unwrap();
        assert_eq!(tf.shape(), &[2, 4]);
        assert_eq!(tf.values()[..4], [0.0, 1.0, 0.0, 1.0], "dt = 0");
        assert_relative_eq!(tf.values()[4], 1.5f64.sin(), max_relative = 1e-12);
        assert_relative_eq!(tf.values()[5], 1.5f64.cos(), max_relative = 1e-12);
        let slow = 1.5 * 10_000f64.powf(-2.0 / 4.0);
        assert_relative_eq!(tf.values()[6], slow.sin(), max_relative = 1e-12);
    }

    #[test]
    fn rk4_matches_exponential_growth() {
        // dh/dt = 0.7 h  =>  h(2) = e^{1.4}
        let tape = Tape::new();
        let h0 = tape.constant(vec![1.0], &[1, 1]).unwrap();
        let dt = tape.constant(vec![2.0], &[1, 1]).unwrap();
        let field = |h: &Tensor| Ok(h.scale(0.7));
        // per-substep relative error is about (0.07)^5 / 120, so ~3e-7 total
        let h = rk4(&h0, &dt, 20, &field).unwrap();
        assert_relative_eq!(h.values()[0], 1.4f64.exp(), max_relative = 1e-6);
    }

    #[test]
    fn rk4_error_shrinks_fourth_order() {
        // halving the step size should cut the error by about 2^4
        let tape = Tape::new();
        let h0 = tape.constant(vec![1.0], &[1, 1]).unwrap();
        let dt = tape.constant(vec![1.0], &[1, 1]).unwrap();
        let field = |h: &Tensor| Ok(h.scale(1.0));
        let exact = 1f64.exp();
        let err = |steps: usize| {
            (rk4(&h0, &dt, steps, &field).unwrap().values()[0] - exact).abs()
        };
        let ratio = err(4) / err(8);
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected roughly 16x error reduction, got {ratio}"
        );
    }
}
