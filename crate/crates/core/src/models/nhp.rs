//! Continuous-time decay RNN. Between events the hidden state relaxes
//! exponentially toward a per-event target,
//! `h(dt) = target + (state - target) * exp(-rate * dt)`,
//! and each event updates (state, target, rate) through a small MLP.
//! Intensities are a softplus readout of the decayed state.

use crate::autodiff::{Tape, Tensor};
use crate::data::{pad_batch, EventSequence, PaddedBatch};
use crate::likelihood::{batch_tensors, mc_compensator, sample_dts, McSamples};
use crate::sampler::{stream_rng, AnchorIntensity, StreamDomain};

use super::nn::{event_inputs, linear};
use super::params::{Binding, Init, ParamId, ParamStore};
use super::{check_batch, finish_loss, LossOutput, ModelConfig, ModelError, TppModel};

const INIT_STREAM: u64 = 3;

struct Ids {
    type_emb: ParamId,
    w1: ParamId,
    b1: ParamId,
    w_state: ParamId,
    b_state: ParamId,
    w_target: ParamId,
    b_target: ParamId,
    w_rate: ParamId,
    b_rate: ParamId,
    h0: ParamId,
    head_u: ParamId,
    head_b: ParamId,
}

pub struct NeuralDecayModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

/// Anchor rows after a scan: the state right after each prefix, the target
/// it decays toward, and the decay rate. Each `[B, L+1, D]`.
struct ScanStates {
    state: Tensor,
    target: Tensor,
    rate: Tensor,
}

fn decay_to(states: (&Tensor, &Tensor, &Tensor), dt: &Tensor) -> Result<Tensor, ModelError> {
    let (state, target, rate) = states;
    let fade = rate.mul(dt)?.neg().exp();
    Ok(target.add(&state.sub(target)?.mul(&fade)?)?)
}

impl NeuralDecayModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        let k = cfg.num_event_types;
        let d = cfg.hidden_size;
        let e = cfg.type_emb_size + cfg.time_emb_size;
        let mut rng = stream_rng(cfg.init_seed, StreamDomain::ParamInit, INIT_STREAM, 0);
        let mut store = ParamStore::new();
        let ids = Ids {
            type_emb: store.add("type_emb", &[k + 1, cfg.type_emb_size], Init::fan_in(k + 1), &mut rng),
            w1: store.add("update.w1", &[d + e, d], Init::fan_in(d + e), &mut rng),
            b1: store.add("update.b1", &[d], Init::Zeros, &mut rng),
            w_state: store.add("update.w_state", &[d, d], Init::fan_in(d), &mut rng),
            b_state: store.add("update.b_state", &[d], Init::Zeros, &mut rng),
            w_target: store.add("update.w_target", &[d, d], Init::fan_in(d), &mut rng),
            b_target: store.add("update.b_target", &[d], Init::Zeros, &mut rng),
            w_rate: store.add("update.w_rate", &[d, d], Init::fan_in(d), &mut rng),
            b_rate: store.add("update.b_rate", &[d], Init::Zeros, &mut rng),
            h0: store.add("h0", &[d], Init::Zeros, &mut rng),
            head_u: store.add("head.u", &[d, k], Init::fan_in(d), &mut rng),
            head_b: store.add("head.bias", &[k], Init::Zeros, &mut rng),
        };
        Ok(Self { cfg, store, ids })
    }

    fn scan(
        &self,
        tape: &Tape,
        binding: &Binding,
        batch: &PaddedBatch,
    ) -> Result<ScanStates, ModelError> {
        let b = batch.batch_size;
        let l = batch.max_len;
        let d = self.cfg.hidden_size;
        let inputs = event_inputs(tape, binding, self.ids.type_emb, batch, self.cfg.time_emb_size)?;

        let mut state = binding.get(self.ids.h0).reshape(&[1, d])?.broadcast_to(&[b, d])?;
        let mut target = state.clone();
        let mut rate = tape.zeros(&[b, d]);
        let mut states = Vec::with_capacity(l + 1);
        let mut targets = Vec::with_capacity(l + 1);
        let mut rates = Vec::with_capacity(l + 1);
        states.push(state.clone());
        targets.push(target.clone());
        rates.push(rate.clone());

        for j in 0..l {
            let mut gaps = vec![0.0; b];
            for bi in 0..b {
                gaps[bi] = batch.dtimes[batch.idx(bi, j)];
            }
            let dt = tape.constant(gaps, &[b, 1])?;
            let h_pre = decay_to((&state, &target, &rate), &dt)?;
            let x = inputs.select(1, j)?;
            let z = Tensor::concat_last(&[h_pre, x])?;
            let u1 = linear(&z, binding.get(self.ids.w1), binding.get(self.ids.b1))?.tanh();
            state = linear(&u1, binding.get(self.ids.w_state), binding.get(self.ids.b_state))?.tanh();
            target = linear(&u1, binding.get(self.ids.w_target), binding.get(self.ids.b_target))?.tanh();
            rate = linear(&u1, binding.get(self.ids.w_rate), binding.get(self.ids.b_rate))?.softplus();
            states.push(state.clone());
            targets.push(target.clone());
            rates.push(rate.clone());
        }
        Ok(ScanStates {
            state: Tensor::stack(&states, 1)?,
            target: Tensor::stack(&targets, 1)?,
            rate: Tensor::stack(&rates, 1)?,
        })
    }
}

impl TppModel for NeuralDecayModel {
    fn model_id(&self) -> &'static str {
        "nhp"
    }

    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(
        &self,
        tape: &Tape,
        binding: &Binding,
        batch: &PaddedBatch,
        samples: &McSamples,
    ) -> Result<LossOutput, ModelError> {
        check_batch(&self.cfg, batch)?;
        samples.matches(batch)?;
        let bt = batch_tensors(tape, batch)?;
        let scan = self.scan(tape, binding, batch)?;
        let u = binding.get(self.ids.head_u);
        let bias = binding.get(self.ids.head_b);

        // Events: intensity of the observed type at each row's endpoint.
        let dt_ev = bt.event_dt.unsqueeze(2)?;
        let h_ev = decay_to((&scan.state, &scan.target, &scan.rate), &dt_ev)?;
        let lam_ev = linear(&h_ev, u, bias)?.softplus();
        let gathered = lam_ev.mul(&bt.event_onehot)?.sum_last()?;
        // padded rows read log(1); the tiny shift guards softplus underflow
        let pad = bt.event_mask.neg().shift(1.0);
        let ev_ll = gathered.shift(1e-30).add(&pad)?.log()?.mul(&bt.event_mask)?;
        let ev_per_seq = ev_ll.sum_last()?;

        // Integral: Monte-Carlo with the state decayed to each sample offset.
        let dts = sample_dts(tape, batch, samples)?;
        let h_s = decay_to(
            (&scan.state.unsqueeze(2)?, &scan.target.unsqueeze(2)?, &scan.rate.unsqueeze(2)?),
            &dts.unsqueeze(3)?,
        )?;
        let total = linear(&h_s, u, bias)?.softplus().sum_last()?;
        let integral = mc_compensator(&bt.lens, &total)?;

        finish_loss(ev_per_seq.sub(&integral)?, batch.total_events())
    }

    fn anchor_after(
        &self,
        history: &EventSequence,
        _probe_horizon: f64,
    ) -> Result<Box<dyn AnchorIntensity>, ModelError> {
        let batch = pad_batch(&[history], self.cfg.num_event_types)?;
        let tape = Tape::new();
        let binding = self.store.bind(&tape, false)?;
        let scan = self.scan(&tape, &binding, &batch)?;
        let d = self.cfg.hidden_size;
        let row = history.len();
        let slice = |t: &Tensor| t.values()[row * d..(row + 1) * d].to_vec();
        Ok(Box::new(NhpAnchor {
            state: slice(&scan.state),
            target: slice(&scan.target),
            rate: slice(&scan.rate),
            u: self.store.values(self.ids.head_u).to_vec(),
            bias: self.store.values(self.ids.head_b).to_vec(),
        }))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct NhpAnchor {
    state: Vec<f64>,
    target: Vec<f64>,
    rate: Vec<f64>,
    /// readout weights, row-major `[D, K]`
    u: Vec<f64>,
    bias: Vec<f64>,
}

impl NhpAnchor {
    fn hidden_at(&self, dt: f64) -> Vec<f64> {
        self.state
            .iter()
            .zip(&self.target)
            .zip(&self.rate)
            .map(|((&s, &g), &r)| g + (s - g) * (-r * dt).exp())
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let k = self.bias.len();
        let mut out = self.bias.clone();
        for (d, &hv) in h.iter().enumerate() {
            for (ki, o) in out.iter_mut().enumerate() {
                *o += self.u[d * k + ki] * hv;
            }
        }
        out
    }
}

impl AnchorIntensity for NhpAnchor {
    fn num_types(&self) -> usize {
        self.bias.len()
    }

    fn intensities(&self, dt: f64) -> Vec<f64> {
        self.logits(&self.hidden_at(dt)).into_iter().map(softplus).collect()
    }

    fn bound_after(&self, from_dt: f64) -> f64 {
        // each coordinate moves monotonically from h_d(from) to target_d, so
        // the per-coordinate max envelopes every logit beyond from_dt
        let k = self.bias.len();
        let h_from = self.hidden_at(from_dt);
        let mut ub = self.bias.clone();
        for (d, (&hf, &tg)) in h_from.iter().zip(&self.target).enumerate() {
            for (ki, o) in ub.iter_mut().enumerate() {
                let w = self.u[d * k + ki];
                *o += (w * hf).max(w * tg);
            }
        }
        ub.into_iter().map(softplus).sum()
    }

    fn bound_is_exact(&self) -> bool {
        true
    }
}
