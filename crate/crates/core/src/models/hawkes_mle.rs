//! Parametric exponential-kernel baseline trained by maximum likelihood.
//!
//! The log-likelihood is closed form, so `loss` ignores the Monte-Carlo
//! samples and evaluates the exact compensator. Rates are parameterized on
//! the log scale so gradient steps keep them positive.

use crate::autodiff::Tape;
use crate::data::{EventSequence, PaddedBatch};
use crate::hawkes::{HawkesAnchor, HawkesParams};
use crate::likelihood::McSamples;
use crate::sampler::AnchorIntensity;

use super::params::{Binding, Init, ParamId, ParamStore};
use super::{check_batch, finish_loss, LossOutput, ModelConfig, ModelError, TppModel};

struct Ids {
    log_mu: ParamId,
    log_alpha: ParamId,
    log_beta: ParamId,
}

pub struct HawkesMleModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

impl HawkesMleModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        let k = cfg.num_event_types;
        // init never draws randomness; any rng source works
        let mut rng = crate::sampler::stream_rng(cfg.init_seed, crate::sampler::StreamDomain::ParamInit, 2, 0);
        let mut store = ParamStore::new();
        let ids = Ids {
            log_mu: store.add("log_mu", &[k], Init::Constant(0.5f64.ln()), &mut rng),
            log_alpha: store.add("log_alpha", &[k * k], Init::Constant(0.2f64.ln()), &mut rng),
            log_beta: store.add("log_beta", &[k * k], Init::Constant(0.0), &mut rng),
        };
        Ok(Self { cfg, store, ids })
    }

    /// Current rates as a simulator-ready parameter set.
    pub fn fitted_params(&self) -> Result<HawkesParams, ModelError> {
        let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        Ok(HawkesParams::new(
            exp(self.store.values(self.ids.log_mu)),
            exp(self.store.values(self.ids.log_alpha)),
            exp(self.store.values(self.ids.log_beta)),
        )?)
    }
}

impl TppModel for HawkesMleModel {
    fn model_id(&self) -> &'static str {
        "hawkes"
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
        let k = self.cfg.num_event_types;
        let k2 = k * k;
        let b = batch.batch_size;

        let mu = binding.get(self.ids.log_mu).exp();
        let alpha = binding.get(self.ids.log_alpha).exp();
        let beta = binding.get(self.ids.log_beta).exp();
        let excite = alpha.mul(&beta)?;

        // state[target*k + source]: pending kernel mass, decayed to the current event
        let mut state = tape.zeros(&[b, k2]);
        let mut ev_ll = tape.zeros(&[b]);
        let mut comp = tape.zeros(&[b]);

        for j in 0..batch.max_len {
            let mut delta = vec![0.0; b];
            let mut remaining = vec![0.0; b];
            let mut onehot = vec![0.0; b * k];
            let mut colmask = vec![0.0; b * k2];
            let mut pad_guard = vec![1.0; b];
            for bi in 0..b {
                let idx = batch.idx(bi, j);
                if batch.seq_mask[idx] == 0.0 {
                    continue;
                }
                delta[bi] = batch.dtimes[idx];
                remaining[bi] = (batch.t_ends[bi] - batch.times[idx]).max(0.0);
                let ki = batch.types[idx];
                onehot[bi * k + ki] = 1.0;
                for target in 0..k {
                    colmask[bi * k2 + target * k + ki] = 1.0;
                }
                pad_guard[bi] = 0.0;
            }
            let delta = tape.constant(delta, &[b, 1])?;
            let remaining = tape.constant(remaining, &[b, 1])?;
            let onehot = tape.constant(onehot, &[b, k])?;
            let colmask = tape.constant(colmask, &[b, k2])?;
            let pad_guard = tape.constant(pad_guard, &[b])?;

            let decayed = state.mul(&beta.mul(&delta)?.neg().exp())?;
            let lam = decayed.reshape(&[b, k, k])?.sum_last()?.add(&mu)?;
            // padded rows contribute log(0 + 1) = 0
            let picked = lam.mul(&onehot)?.sum_last()?.add(&pad_guard)?;
            ev_ll = ev_ll.add(&picked.log()?)?;

            let survived = beta.mul(&remaining)?.neg().exp().neg().shift(1.0);
            comp = comp.add(&alpha.mul(&survived)?.mul(&colmask)?.sum_last()?)?;

            state = decayed.add(&excite.mul(&colmask)?)?;
        }

        let t_ends = tape.constant(batch.t_ends.clone(), &[b])?;
        let base_comp = mu.sum_all().reshape(&[1])?.mul(&t_ends)?;
        let ll = ev_ll.sub(&base_comp)?.sub(&comp)?;
        finish_loss(ll, batch.total_events())
    }

    fn anchor_after(
        &self,
        history: &EventSequence,
        _probe_horizon: f64,
    ) -> Result<Box<dyn AnchorIntensity>, ModelError> {
        let params = self.fitted_params()?;
        let t0 = history.times().last().copied().unwrap_or(0.0);
        let anchor = HawkesAnchor::after_history(&params, history.times(), history.types(), t0)?;
        Ok(Box::new(anchor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::data::pad_batch;
    use crate::hawkes;
    use crate::sampler::{stream_rng, StreamDomain};
    use approx::assert_relative_eq;

    fn two_type_params() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            vec![0.1, 0.3],
            vec![0.2, 0.5, 0.1, 0.4],
            vec![1.0, 2.0, 3.0, 0.5],
        )
    }

    fn pinned_model() -> HawkesMleModel {
        let (mu, alpha, beta) = two_type_params();
        let mut model = HawkesMleModel::new(ModelConfig::new("hawkes", 2)).unwrap();
        let ln = |v: Vec<f64>| v.into_iter().map(|x| x.ln()).collect::<Vec<_>>();
        let (id_mu, id_alpha, id_beta) = (model.ids.log_mu, model.ids.log_alpha, model.ids.log_beta);
        model.store_mut().set_values(id_mu, &ln(mu)).unwrap();
        model.store_mut().set_values(id_alpha, &ln(alpha)).unwrap();
        model.store_mut().set_values(id_beta, &ln(beta)).unwrap();
        model
    }

    fn toy_seqs() -> Vec<EventSequence> {
        vec![
            EventSequence::new(vec![0.5, 1.2, 2.0], vec![1, 0, 1], 2.5, 0).unwrap(),
            EventSequence::new(vec![0.7], vec![0], 2.5, 1).unwrap(),
            EventSequence::new(vec![], vec![], 2.5, 2).unwrap(),
        ]
    }

    #[test]
    fn per_seq_loglik_matches_reference_recursion() {
        let model = pinned_model();
        let params = model.fitted_params().unwrap();
        let seqs = toy_seqs();
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let batch = pad_batch(&refs, 2).unwrap();
        let tape = Tape::new();
        let binding = model.store().bind(&tape, false).unwrap();
        let mut rng = stream_rng(0, StreamDomain::McSamples, 0, 0);
        let samples = McSamples::draw(batch.batch_size, batch.max_len + 1, 1, &mut rng).unwrap();
        let out = model.loss(&tape, &binding, &batch, &samples).unwrap();
        for (b, seq) in seqs.iter().enumerate() {
            let want = hawkes::loglik(&params, seq).unwrap();
            assert_relative_eq!(out.per_seq_ll[b], want, epsilon = 1e-9, max_relative = 1e-9);
        }
        // frozen value for the first sequence
        assert_relative_eq!(out.per_seq_ll[0], -5.518753209237836, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = pinned_model();
        let seqs = toy_seqs();
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let batch = pad_batch(&refs, 2).unwrap();
        let mut rng = stream_rng(0, StreamDomain::McSamples, 0, 0);
        let samples = McSamples::draw(batch.batch_size, batch.max_len + 1, 1, &mut rng).unwrap();
        let x0 = model.store().flat();
        let mut f = |x: &[f64]| {
            model.store_mut().set_flat(x).unwrap();
            let tape = Tape::new();
            let binding = model.store().bind(&tape, true).unwrap();
            let out = model.loss(&tape, &binding, &batch, &samples).unwrap();
            out.nll.backward().unwrap();
            (out.nll.scalar_value(), binding.grads_flat())
        };
        let report = grad_check(&mut f, &x0, 1e-6, 1e-5);
        assert!(
            report.pass,
            "worst coord {}: analytic {} vs numeric {} (rel {})",
            report.worst_coord, report.analytic, report.numeric, report.max_rel_err
        );
    }

    #[test]
    fn anchor_matches_generator_intensity() {
        let model = pinned_model();
        let params = model.fitted_params().unwrap();
        let seq = EventSequence::new(vec![0.5, 1.2], vec![1, 0], 2.0, 0).unwrap();
        let anchor = model.anchor_after(&seq, 1.0).unwrap();
        assert!(anchor.bound_is_exact());
        for dt in [0.1, 0.3, 0.8] {
            let got = anchor.intensities(dt);
            let want = hawkes::intensity(&params, seq.times(), seq.types(), 1.2 + dt).unwrap();
            for k in 0..2 {
                assert_relative_eq!(got[k], want[k], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn fitted_params_round_trip_positive() {
        let model = HawkesMleModel::new(ModelConfig::new("hawkes", 3)).unwrap();
        let params = model.fitted_params().unwrap();
        assert_eq!(params.num_types(), 3);
        assert!(params.mu().iter().all(|&m| m > 0.0));
    }
}
