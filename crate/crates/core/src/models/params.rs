use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{Tape, Tensor};

/// Handle into a [`ParamStore`]; stable across flat round trips because
/// parameters are never removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform { bound: f64 },
}

impl Init {
    /// Uniform in `[-1/sqrt(n), 1/sqrt(n))`, the usual fan-in scaling.
    pub fn fan_in(n: usize) -> Self {
        Init::Uniform { bound: 1.0 / (n.max(1) as f64).sqrt() }
    }
}

/// Name and shape of one parameter, as recorded in checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

struct Entry {
    spec: ParamSpec,
    values: Vec<f64>,
}

/// Flat-addressable parameter set. Declaration order defines the layout of
/// `flat()`/`set_flat()` and of checkpoint payloads.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha12Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::Uniform { bound } => {
                (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect()
            }
        };
        self.entries.push(Entry {
            spec: ParamSpec { name: name.to_string(), shape: shape.to_vec() },
            values,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        self.entries.iter().map(|e| e.spec.clone()).collect()
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].spec.shape
    }

    /// Overwrites one parameter; used to pin weights in tests and tools.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<(), ModelError> {
        let entry = &mut self.entries[id.0];
        if entry.values.len() != values.len() {
            return Err(ModelError::BadFlatLength {
                expected: entry.values.len(),
                got: values.len(),
            });
        }
        entry.values.copy_from_slice(values);
        Ok(())
    }

    /// All values concatenated in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for e in &self.entries {
            out.extend_from_slice(&e.values);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.num_values() {
            return Err(ModelError::BadFlatLength { expected: self.num_values(), got: flat.len() });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.values.len();
            e.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Materializes every parameter on a tape. Trainable bindings are leaves
    /// that accumulate gradients; frozen ones are constants, which lets the
    /// no-grad evaluation path free intermediates eagerly.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Result<Binding, ModelError> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let t = if trainable {
                tape.leaf(e.values.clone(), &e.spec.shape)?
            } else {
                tape.constant(e.values.clone(), &e.spec.shape)?
            };
            tensors.push(t);
        }
        Ok(Binding { tensors })
    }
}

/// Tape-bound view of a [`ParamStore`], one tensor per parameter.
pub struct Binding {
    tensors: Vec<Tensor>,
}

impl Binding {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Gradients concatenated in declaration order; parameters that never
    /// touched the loss contribute zeros.
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.tensors {
            match t.grad() {
                Some(g) => out.extend_from_slice(&g),
                None => out.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{stream_rng, StreamDomain};

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut rng = stream_rng(0, StreamDomain::ParamInit, 0, 0);
        let mut s = ParamStore::new();
        let w = s.add("w", &[2, 3], Init::fan_in(2), &mut rng);
        let b = s.add("b", &[3], Init::Zeros, &mut rng);
        (s, w, b)
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let (mut s, w, _) = store();
        let flat = s.flat();
        assert_eq!(flat.len(), 9);
        let mut bumped = flat.clone();
        bumped[0] += 1.0;
        s.set_flat(&bumped).unwrap();
        assert_eq!(s.values(w)[0], flat[0] + 1.0);
        assert!(s.set_flat(&flat[..5]).is_err());
    }

    #[test]
    fn fan_in_init_respects_bound() {
        let (s, w, b) = store();
        let bound = 1.0 / 2f64.sqrt();
        assert!(s.values(w).iter().all(|v| v.abs() <= bound));
        assert!(s.values(w).iter().any(|&v| v != 0.0));
        assert!(s.values(b).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trainable_binding_collects_grads_in_order() {
        let (s, _w, b) = store();
        let tape = Tape::new();
        let binding = s.bind(&tape, true).unwrap();
        // loss touches only b, so w's slot stays zero
        let loss = binding.get(b).mul(binding.get(b)).unwrap().sum_all();
        loss.backward().unwrap();
        let grads = binding.grads_flat();
        assert_eq!(grads.len(), 9);
        assert!(grads[..6].iter().all(|&g| g == 0.0));
        for (g, v) in grads[6..].iter().zip(s.values(b)) {
            assert_eq!(*g, 2.0 * v);
        }
    }

    #[test]
    fn frozen_binding_keeps_constants() {
        let (s, w, _) = store();
        let tape = Tape::new();
        let binding = s.bind(&tape, false).unwrap();
        assert!(!binding.get(w).requires_grad());
    }
}
