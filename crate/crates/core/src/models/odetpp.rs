//! ODE-state model. Between events the hidden state follows a learned,
//! bounded vector field integrated with fixed-step RK4; each event applies
//! an additive bounded jump. Intensities are a softplus readout.
//!
//! The map `dt -> rk4(anchor, dt, ode_steps)` defines the intensity
//! everywhere: the likelihood's sample points, the event endpoints and the
//! sampling anchors all evaluate exactly this function.

use crate::autodiff::{Tape, Tensor};
use crate::data::{pad_batch, EventSequence, PaddedBatch};
use crate::likelihood::{batch_tensors, mc_compensator, sample_dts, McSamples};
use crate::sampler::{probe_grid_max, stream_rng, AnchorIntensity, StreamDomain};

use super::nn::{event_inputs, linear, rk4};
use super::params::{Binding, Init, ParamId, ParamStore};
use super::{check_batch, finish_loss, LossOutput, ModelConfig, ModelError, TppModel};

const INIT_STREAM: u64 = 4;

struct Ids {
    type_emb: ParamId,
    field_w1: ParamId,
    field_b1: ParamId,
    field_w2: ParamId,
    field_b2: ParamId,
    jump_w: ParamId,
    jump_b: ParamId,
    h0: ParamId,
    head_u: ParamId,
    head_b: ParamId,
}

pub struct OdeTppModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

impl OdeTppModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        if cfg.ode_steps == 0 {
            return Err(ModelError::BadConfig("ode_steps must be at least 1"));
        }
        let k = cfg.num_event_types;
        let d = cfg.hidden_size;
        let e = cfg.type_emb_size + cfg.time_emb_size;
        let mut rng = stream_rng(cfg.init_seed, StreamDomain::ParamInit, INIT_STREAM, 0);
        let mut store = ParamStore::new();
        let ids = Ids {
            type_emb: store.add("type_emb", &[k + 1, cfg.type_emb_size], Init::fan_in(k + 1), &mut rng),
            field_w1: store.add("field.w1", &[d, d], Init::fan_in(d), &mut rng),
            field_b1: store.add("field.b1", &[d], Init::Zeros, &mut rng),
            field_w2: store.add("field.w2", &[d, d], Init::fan_in(d), &mut rng),
            field_b2: store.add("field.b2", &[d], Init::Zeros, &mut rng),
            jump_w: store.add("jump.w", &[d + e, d], Init::fan_in(d + e), &mut rng),
            jump_b: store.add("jump.b", &[d], Init::Zeros, &mut rng),
            h0: store.add("h0", &[d], Init::Zeros, &mut rng),
            head_u: store.add("head.u", &[d, k], Init::fan_in(d), &mut rng),
            head_b: store.add("head.bias", &[k], Init::Zeros, &mut rng),
        };
        Ok(Self { cfg, store, ids })
    }

    fn field<'a>(&self, binding: &'a Binding) -> impl Fn(&Tensor) -> Result<Tensor, ModelError> + 'a {
        let (w1, b1) = (binding.get(self.ids.field_w1), binding.get(self.ids.field_b1));
        let (w2, b2) = (binding.get(self.ids.field_w2), binding.get(self.ids.field_b2));
        move |h: &Tensor| Ok(linear(&linear(h, w1, b1)?.tanh(), w2, b2)?.tanh())
    }

    /// Anchor rows `[B, L+1, D]` plus the pre-jump states at each event row
    /// `[B, L+1, D]` (last row duplicates the final anchor; it is masked).
    fn scan(
        &self,
        tape: &Tape,
        binding: &Binding,
        batch: &PaddedBatch,
    ) -> Result<(Tensor, Tensor), ModelError> {
        let b = batch.batch_size;
        let l = batch.max_len;
        let d = self.cfg.hidden_size;
        let inputs = event_inputs(tape, binding, self.ids.type_emb, batch, self.cfg.time_emb_size)?;
        let field = self.field(binding);

        let mut h = binding.get(self.ids.h0).reshape(&[1, d])?.broadcast_to(&[b, d])?;
        let mut anchors = Vec::with_capacity(l + 1);
        let mut pres = Vec::with_capacity(l + 1);
        anchors.push(h.clone());
        for j in 0..l {
            let mut gaps = vec![0.0; b];
            for bi in 0..b {
                gaps[bi] = batch.dtimes[batch.idx(bi, j)];
            }
            let dt = tape.constant(gaps, &[b, 1])?;
            let pre = rk4(&h, &dt, self.cfg.ode_steps, &field)?;
            let x = inputs.select(1, j)?;
            let z = Tensor::concat_last(&[pre.clone(), x])?;
            let jump = linear(&z, binding.get(self.ids.jump_w), binding.get(self.ids.jump_b))?.tanh();
            h = pre.add(&jump)?;
            pres.push(pre);
            anchors.push(h.clone());
        }
        pres.push(h.clone());
        Ok((Tensor::stack(&anchors, 1)?, Tensor::stack(&pres, 1)?))
    }
}

impl TppModel for OdeTppModel {
    fn model_id(&self) -> &'static str {
        "odetpp"
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
        let (anchors, pres) = self.scan(tape, binding, batch)?;
        let u = binding.get(self.ids.head_u);
        let bias = binding.get(self.ids.head_b);

        // Events: the scan already integrated up to each event endpoint.
        let lam_ev = linear(&pres, u, bias)?.softplus();
        let gathered = lam_ev.mul(&bt.event_onehot)?.sum_last()?;
        let pad = bt.event_mask.neg().shift(1.0);
        let ev_ll = gathered.shift(1e-30).add(&pad)?.log()?.mul(&bt.event_mask)?;
        let ev_per_seq = ev_ll.sum_last()?;

        // Integral: integrate every sample offset from its row's anchor.
        let dts = sample_dts(tape, batch, samples)?;
        let s = samples.per_row();
        let rows = batch.max_len + 1;
        let d = self.cfg.hidden_size;
        let spread = anchors
            .unsqueeze(2)?
            .broadcast_to(&[batch.batch_size, rows, s, d])?;
        let field = self.field(binding);
        let h_s = rk4(&spread, &dts.unsqueeze(3)?, self.cfg.ode_steps, &field)?;
        let total = linear(&h_s, u, bias)?.softplus().sum_last()?;
        let integral = mc_compensator(&bt.lens, &total)?;

        finish_loss(ev_per_seq.sub(&integral)?, batch.total_events())
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
        let (anchors, _) = self.scan(&tape, &binding, &batch)?;
        let d = self.cfg.hidden_size;
        let row = history.len();
        Ok(Box::new(OdeAnchor {
            h: anchors.values()[row * d..(row + 1) * d].to_vec(),
            w1: self.store.values(self.ids.field_w1).to_vec(),
            b1: self.store.values(self.ids.field_b1).to_vec(),
            w2: self.store.values(self.ids.field_w2).to_vec(),
            b2: self.store.values(self.ids.field_b2).to_vec(),
            u: self.store.values(self.ids.head_u).to_vec(),
            bias: self.store.values(self.ids.head_b).to_vec(),
            steps: self.cfg.ode_steps,
            probe_horizon,
        }))
    }
}

struct OdeAnchor {
    h: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// readout weights, row-major `[D, K]`
    u: Vec<f64>,
    bias: Vec<f64>,
    steps: usize,
    probe_horizon: f64,
}

impl OdeAnchor {
    fn field(&self, h: &[f64]) -> Vec<f64> {
        let d = h.len();
        let mut mid = self.b1.clone();
        for (i, &hi) in h.iter().enumerate() {
            for (j, m) in mid.iter_mut().enumerate() {
                *m += hi * self.w1[i * d + j];
            }
        }
        for v in &mut mid {
            *v = v.tanh();
        }
        let mut out = self.b2.clone();
        for (i, &mi) in mid.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += mi * self.w2[i * d + j];
            }
        }
        for v in &mut out {
            *v = v.tanh();
        }
        out
    }

    fn hidden_at(&self, dt: f64) -> Vec<f64> {
        let steps = self.steps.max(1);
        let step = dt / steps as f64;
        let mut h = self.h.clone();
        let mut buf = vec![0.0; h.len()];
        for _ in 0..steps {
            let k1 = self.field(&h);
            for (b, (&hv, &kv)) in buf.iter_mut().zip(h.iter().zip(&k1)) {
                *b = hv + 0.5 * step * kv;
            }
            let k2 = self.field(&buf);
            for (b, (&hv, &kv)) in buf.iter_mut().zip(h.iter().zip(&k2)) {
                *b = hv + 0.5 * step * kv;
            }
            let k3 = self.field(&buf);
            for (b, (&hv, &kv)) in buf.iter_mut().zip(h.iter().zip(&k3)) {
                *b = hv + step * kv;
            }
            let k4 = self.field(&buf);
            for (i, hv) in h.iter_mut().enumerate() {
                *hv += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        h
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl AnchorIntensity for OdeAnchor {
    fn num_types(&self) -> usize {
        self.bias.len()
    }

    fn intensities(&self, dt: f64) -> Vec<f64> {
        let h = self.hidden_at(dt);
        let k = self.bias.len();
        let mut logits = self.bias.clone();
        for (d, &hv) in h.iter().enumerate() {
            for (ki, o) in logits.iter_mut().enumerate() {
                *o += self.u[d * k + ki] * hv;
            }
        }
        logits.into_iter().map(softplus).collect()
    }

    fn bound_after(&self, from_dt: f64) -> f64 {
        probe_grid_max(self, from_dt, self.probe_horizon, 64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::models::test_util::simpson;
    use approx::assert_relative_eq;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::new("odetpp", 2);
        cfg.hidden_size = 4;
        cfg.type_emb_size = 3;
        cfg.time_emb_size = 4;
        cfg.ode_steps = 3;
        cfg.init_seed = 13;
        cfg
    }

    fn toy_batch() -> (Vec<EventSequence>, PaddedBatch) {
        let seqs = vec![
            EventSequence::new(vec![0.4, 1.1, 2.0], vec![0, 1, 0], 2.5, 0).unwrap(),
            EventSequence::new(vec![0.9], vec![1], 2.5, 1).unwrap(),
        ];
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let batch = pad_batch(&refs, 2).unwrap();
        (seqs, batch)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = OdeTppModel::new(tiny_cfg()).unwrap();
        let (_, batch) = toy_batch();
        let mut rng = stream_rng(6, StreamDomain::McSamples, 0, 0);
        let samples = McSamples::draw(batch.batch_size, batch.max_len + 1, 2, &mut rng).unwrap();
        let x0 = model.store().flat();
        let mut f = |x: &[f64]| {
            model.store_mut().set_flat(x).unwrap();
            let tape = Tape::new();
            let binding = model.store().bind(&tape, true).unwrap();
            let out = model.loss(&tape, &binding, &batch, &samples).unwrap();
            out.nll.backward().unwrap();
            (out.nll.scalar_value(), binding.grads_flat())
        };
        let report = grad_check(&mut f, &x0, 1e-5, 1e-4);
        assert!(
            report.pass,
            "worst coord {}: analytic {} vs numeric {} (rel {})",
            report.worst_coord, report.analytic, report.numeric, report.max_rel_err
        );
    }

    #[test]
    fn mc_loglik_matches_quadrature() {
        let model = OdeTppModel::new(tiny_cfg()).unwrap();
        let (seqs, batch) = toy_batch();
        let tape = Tape::new();
        let binding = model.store().bind(&tape, false).unwrap();
        let mut rng = stream_rng(7, StreamDomain::McSamples, 0, 0);
        let samples = McSamples::draw(batch.batch_size, batch.max_len + 1, 2000, &mut rng).unwrap();
        let out = model.loss(&tape, &binding, &batch, &samples).unwrap();

        for (b, seq) in seqs.iter().enumerate() {
            let mut ll = 0.0;
            let mut prev_t = 0.0;
            for row in 0..=seq.len() {
                let anchor = model.anchor_after(&seq.prefix(row), 10.0).unwrap();
                let end = if row < seq.len() { seq.times()[row] } else { seq.t_end() };
                let len = (end - prev_t).max(0.0);
                ll -= simpson(&|dt| anchor.total(dt), 0.0, len, 400);
                if row < seq.len() {
                    ll += anchor.intensities(len)[seq.types()[row]].ln();
                    prev_t = seq.times()[row];
                }
            }
            assert_relative_eq!(out.per_seq_ll[b], ll, max_relative = 2e-3, epsilon = 2e-3);
        }
    }

    #[test]
    fn anchor_integrator_matches_tensor_path() {
        // the scalar RK4 in the anchor and the tensor RK4 in the loss must
        // produce the same event intensities
        let model = OdeTppModel::new(tiny_cfg()).unwrap();
        let (seqs, _) = toy_batch();
        let seq = &seqs[0];
        for row in 0..seq.len() {
            let anchor = model.anchor_after(&seq.prefix(row), 10.0).unwrap();
            let gap = seq.times()[row] - if row == 0 { 0.0 } else { seq.times()[row - 1] };
            let lam = anchor.intensities(gap);
            assert!(lam.iter().all(|&l| l.is_finite() && l > 0.0));
        }
        // pin determinism across two constructions
        let again = OdeTppModel::new(tiny_cfg()).unwrap();
        let a = model.anchor_after(&seqs[0], 5.0).unwrap().intensities(0.5);
        let b = again.anchor_after(&seqs[0], 5.0).unwrap().intensities(0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn integration_error_falls_with_step_count() {
        let mk = |steps: usize| {
            let mut cfg = tiny_cfg();
            cfg.ode_steps = steps;
            let mut m = OdeTppModel::new(cfg).unwrap();
            // push weights away from zero so the field actually bends
            let flat: Vec<f64> = m
                .store()
                .flat()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + 0.1 * ((i % 5) as f64 - 2.0))
                .collect();
            m.store_mut().set_flat(&flat).unwrap();
            m
        };
        let seq = EventSequence::new(vec![0.5], vec![0], 2.0, 0).unwrap();
        let total = |steps: usize| {
            mk(steps).anchor_after(&seq, 5.0).unwrap().total(1.5)
        };
        let reference = total(256);
        let err4 = (total(4) - reference).abs();
        let err16 = (total(16) - reference).abs();
        assert!(err16 < err4, "err16 {err16} vs err4 {err4}");
        assert!(err16 < 1e-6, "err16 {err16}");
    }
}
