//! Intensity-free model: the gap to the next event gets a log-normal
//! mixture density, the next type an independent categorical, both read off
//! a tanh RNN. The likelihood is analytic (density at events, survival mass
//! for the censored tail), so no Monte-Carlo samples are consumed.
//! Intensities for sampling are recovered through the hazard
//! `lambda_k(dt) = p_k * f(dt) / S(dt)`.

use crate::autodiff::{Tape, Tensor};
use crate::data::{pad_batch, EventSequence, PaddedBatch};
use crate::likelihood::{batch_tensors, McSamples};
use crate::sampler::{probe_grid_max, stream_rng, AnchorIntensity, StreamDomain};

use super::nn::{event_inputs, linear, rnn_anchor_states};
use super::params::{Binding, Init, ParamId, ParamStore};
use super::{check_batch, finish_loss, LossOutput, ModelConfig, ModelError, TppModel};

const INIT_STREAM: u64 = 5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const MIN_SIGMA: f64 = 1e-3;
const MIN_GAP: f64 = 1e-12;

struct Ids {
    type_emb: ParamId,
    wx: ParamId,
    wh: ParamId,
    bh: ParamId,
    h0: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    mean_w: ParamId,
    mean_b: ParamId,
    sig_w: ParamId,
    sig_b: ParamId,
    type_w: ParamId,
    type_b: ParamId,
}

pub struct IntensityFreeModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

/// Mixture heads at every anchor row.
struct Heads {
    log_w: Tensor,
    mean: Tensor,
    sigma: Tensor,
    type_logp: Tensor,
}

impl IntensityFreeModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        if cfg.mixture_components == 0 {
            return Err(ModelError::BadConfig("mixture_components must be at least 1"));
        }
        let k = cfg.num_event_types;
        let d = cfg.hidden_size;
        let m = cfg.mixture_components;
        let e = cfg.type_emb_size + cfg.time_emb_size;
        let mut rng = stream_rng(cfg.init_seed, StreamDomain::ParamInit, INIT_STREAM, 0);
        let mut store = ParamStore::new();
        let ids = Ids {
            type_emb: store.add("type_emb", &[k + 1, cfg.type_emb_size], Init::fan_in(k + 1), &mut rng),
            wx: store.add("rnn.wx", &[e, d], Init::fan_in(e), &mut rng),
            wh: store.add("rnn.wh", &[d, d], Init::fan_in(d), &mut rng),
            bh: store.add("rnn.bias", &[d], Init::Zeros, &mut rng),
            h0: store.add("rnn.h0", &[d], Init::Zeros, &mut rng),
            mix_w: store.add("mix.w", &[d, m], Init::fan_in(d), &mut rng),
            mix_b: store.add("mix.bias", &[m], Init::Zeros, &mut rng),
            mean_w: store.add("mean.w", &[d, m], Init::fan_in(d), &mut rng),
            mean_b: store.add("mean.bias", &[m], Init::Zeros, &mut rng),
            sig_w: store.add("sigma.w", &[d, m], Init::fan_in(d), &mut rng),
            sig_b: store.add("sigma.bias", &[m], Init::Zeros, &mut rng),
            type_w: store.add("type.w", &[d, k], Init::fan_in(d), &mut rng),
            type_b: store.add("type.bias", &[k], Init::Zeros, &mut rng),
        };
        Ok(Self { cfg, store, ids })
    }

    fn heads(
        &self,
        tape: &Tape,
        binding: &Binding,
        batch: &PaddedBatch,
    ) -> Result<Heads, ModelError> {
        let inputs = event_inputs(tape, binding, self.ids.type_emb, batch, self.cfg.time_emb_size)?;
        let anchors = rnn_anchor_states(
            &inputs,
            binding.get(self.ids.h0),
            binding.get(self.ids.wx),
            binding.get(self.ids.wh),
            binding.get(self.ids.bh),
        )?;
        Ok(Heads {
            log_w: linear(&anchors, binding.get(self.ids.mix_w), binding.get(self.ids.mix_b))?
                .log_softmax_last()?,
            mean: linear(&anchors, binding.get(self.ids.mean_w), binding.get(self.ids.mean_b))?,
            sigma: linear(&anchors, binding.get(self.ids.sig_w), binding.get(self.ids.sig_b))?
                .softplus()
                .shift(MIN_SIGMA),
            type_logp: linear(&anchors, binding.get(self.ids.type_w), binding.get(self.ids.type_b))?
                .log_softmax_last()?,
        })
    }
}

impl TppModel for IntensityFreeModel {
    fn model_id(&self) -> &'static str {
        "iftpp"
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
        _samples: &McSamples,
    ) -> Result<LossOutput, ModelError> {
        check_batch(&self.cfg, batch)?;
        let bt = batch_tensors(tape, batch)?;
        let heads = self.heads(tape, binding, batch)?;
        let b = batch.batch_size;
        let rows = batch.max_len + 1;

        // Density of the observed gap, in log space. Padded rows see a
        // dummy gap of 1 and are masked away afterwards.
        let pad = bt.event_mask.neg().shift(1.0);
        let x = bt.event_dt.mul(&bt.event_mask)?.add(&pad)?.log()?;
        let z = x.unsqueeze(2)?.sub(&heads.mean)?.div(&heads.sigma)?;
        let log_phi = z
            .mul(&z)?
            .scale(-0.5)
            .add(&heads.log_w)?
            .sub(&heads.sigma.log()?)?
            .shift(-LN_SQRT_2PI);
        let log_f = log_phi.logsumexp_last()?.sub(&x)?;
        let type_ll = heads.type_logp.mul(&bt.event_onehot)?.sum_last()?;
        let ev_per_seq = log_f.add(&type_ll)?.mul(&bt.event_mask)?.sum_last()?;

        // Censored tail: exactly one row per sequence, at index len(seq).
        let mut tail_x = vec![0.0; b * rows];
        let mut tail_mask = vec![0.0; b * rows];
        for bi in 0..b {
            let len = batch.seq_lens[bi];
            let last = if len == 0 { 0.0 } else { batch.times[batch.idx(bi, len - 1)] };
            let gap = (batch.t_ends[bi] - last).max(MIN_GAP);
            tail_x[bi * rows + len] = gap.ln();
            tail_mask[bi * rows + len] = 1.0;
        }
        let tail_x = tape.constant(tail_x, &[b, rows])?;
        let tail_mask = tape.constant(tail_mask, &[b, rows])?;
        let z_tail = tail_x.unsqueeze(2)?.sub(&heads.mean)?.div(&heads.sigma)?;
        let surv = heads.log_w.exp().mul(&z_tail.neg().std_normal_cdf())?.sum_last()?;
        let tail_per_seq = surv.shift(1e-30).log()?.mul(&tail_mask)?.sum_last()?;

        finish_loss(ev_per_seq.add(&tail_per_seq)?, batch.total_events())
    }

    fn anchor_after(
        &self,
        history: &EventSequence,
        probe_horizon: f64,
    ) -> Result<Box<dyn AnchorIntensity>, ModelError> {
        if !(probe_horizon > 0.0 && probe_horizon.is_finite()) {
            return Err(ModelError::BadConfig("probe horizon must be positive and finite"));
        }
        let batch = pad_batch(&[history], self.cfg.num_event_types)?;
        let tape = Tape::new();
        let binding = self.store.bind(&tape, false)?;
        let heads = self.heads(&tape, &binding, &batch)?;
        let m = self.cfg.mixture_components;
        let k = self.cfg.num_event_types;
        let row = history.len();
        let slice = |t: &Tensor, width: usize| t.values()[row * width..(row + 1) * width].to_vec();
        let anchor = MixtureAnchor::new(
            slice(&heads.log_w, m).iter().map(|lw| lw.exp()).collect(),
            slice(&heads.mean, m),
            slice(&heads.sigma, m),
            slice(&heads.type_logp, k).iter().map(|lp| lp.exp()).collect(),
            probe_horizon,
        )?;
        Ok(Box::new(anchor))
    }
}

/// Log-normal mixture over the next gap plus a type distribution. Public so
/// the head's parameterization can be probed directly: `density` must
/// integrate to one whatever the weights, means and scales.
#[derive(Debug, Clone)]
pub struct MixtureAnchor {
    weight: Vec<f64>,
    mean: Vec<f64>,
    sigma: Vec<f64>,
    type_p: Vec<f64>,
    probe_horizon: f64,
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

impl MixtureAnchor {
    pub fn new(
        weight: Vec<f64>,
        mean: Vec<f64>,
        sigma: Vec<f64>,
        type_p: Vec<f64>,
        probe_horizon: f64,
    ) -> Result<Self, ModelError> {
        if weight.is_empty() || weight.len() != mean.len() || weight.len() != sigma.len() {
            return Err(ModelError::BadConfig("mixture vectors must share a nonzero length"));
        }
        let simplex = |v: &[f64]| {
            v.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-6
        };
        if !simplex(&weight) {
            return Err(ModelError::BadConfig("mixture weights must form a simplex"));
        }
        if type_p.is_empty() || !simplex(&type_p) {
            return Err(ModelError::BadConfig("type probabilities must form a simplex"));
        }
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(ModelError::BadConfig("mixture means must be finite"));
        }
        if !sigma.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(ModelError::BadConfig("mixture scales must be positive"));
        }
        if !(probe_horizon > 0.0 && probe_horizon.is_finite()) {
            return Err(ModelError::BadConfig("probe horizon must be positive and finite"));
        }
        Ok(Self { weight, mean, sigma, type_p, probe_horizon })
    }

    pub fn num_components(&self) -> usize {
        self.weight.len()
    }

    /// Next-gap density at `dt`.
    pub fn density(&self, dt: f64) -> f64 {
        let dt = dt.max(MIN_GAP);
        let x = dt.ln();
        let mut f = 0.0;
        for ((&w, &mu), &s) in self.weight.iter().zip(&self.mean).zip(&self.sigma) {
            f += w * std_normal_pdf((x - mu) / s) / (s * dt);
        }
        f
    }

    /// Probability the gap exceeds `dt`.
    pub fn survival(&self, dt: f64) -> f64 {
        let x = dt.max(MIN_GAP).ln();
        let mut s = 0.0;
        for ((&w, &mu), &sg) in self.weight.iter().zip(&self.mean).zip(&self.sigma) {
            s += w * std_normal_cdf(-(x - mu) / sg);
        }
        s
    }

    pub fn hazard(&self, dt: f64) -> f64 {
        self.density(dt) / self.survival(dt).max(1e-12)
    }

    /// Span of `ln dt` covering all but ~1e-30 of every component's mass;
    /// quadrature over it sees the whole density.
    pub fn log_gap_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (&mu, &s) in self.mean.iter().zip(&self.sigma) {
            lo = lo.min(mu - 12.0 * s);
            hi = hi.max(mu + 12.0 * s);
        }
        (lo, hi)
    }
}

impl AnchorIntensity for MixtureAnchor {
    fn num_types(&self) -> usize {
        self.type_p.len()
    }

    fn intensities(&self, dt: f64) -> Vec<f64> {
        let h = self.hazard(dt);
        self.type_p.iter().map(|&p| p * h).collect()
    }

    fn bound_after(&self, from_dt: f64) -> f64 {
        probe_grid_max(self, from_dt, self.probe_horizon, 64)
    }
}
