//! Named parameter store with optimizer moment state. Parameters are leased
//! onto a fresh tape each training step and gradients copied back after
//! backward.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::motion::mix;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Param {
    pub tensor: Tensor,
    /// First and second AdamW moment estimates.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    fn new(tensor: Tensor) -> Param {
        let n = tensor.numel();
        Param {
            tensor,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Parameters keyed by name; iteration order is always lexicographic, which
/// keeps every downstream consumer (optimizer, checkpoints) deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.params.insert(name.to_string(), Param::new(tensor));
    }

    pub fn insert_normal(&mut self, name: &str, shape: Vec<usize>, std: f64, seed: u64) {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, hash_name(name)));
        let values: Vec<f64> = (0..n).map(|_| std * box_muller(&mut rng)).collect();
        self.insert(name, Tensor::new(shape, values).expect("shape/value agreement"));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
    }

    /// Deep-copy every parameter under `src` prefix to `dst` prefix with
    /// fresh moment state.
    pub fn clone_prefix(&mut self, src: &str, dst: &str) {
        let copies: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(src))
            .map(|(k, p)| (format!("{dst}{}", &k[src.len()..]), p.tensor.clone()))
            .collect();
        for (name, tensor) in copies {
            self.insert(&name, tensor);
        }
    }
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a, stable across runs
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Parameters recorded as leaves on one tape.
pub struct BoundParams {
    ids: BTreeMap<String, TensorId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound to tape"))
    }
}

/// Record every parameter in the store as a tape leaf. `trainable` decides
/// which leaves carry gradient state.
pub fn bind_params(
    store: &ParamStore,
    tape: &mut Tape,
    trainable: &dyn Fn(&str) -> bool,
) -> BoundParams {
    let mut ids = BTreeMap::new();
    for (name, p) in store.iter() {
        let id = tape
            .leaf(p.tensor.shape.clone(), p.tensor.values.clone(), trainable(name))
            .expect("stored parameter shapes are valid");
        ids.insert(name.clone(), id);
    }
    BoundParams { ids }
}

/// Copy gradients accumulated on the tape back into plain (name, grad)
/// pairs, in lexicographic parameter order.
pub fn collect_grads(bound: &BoundParams, tape: &Tape) -> Vec<(String, Vec<f64>)> {
    bound
        .ids
        .iter()
        .filter_map(|(name, &id)| tape.grad(id).map(|g| (name.clone(), g.to_vec())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_name() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        a.insert_normal("w", vec![4, 4], 0.1, 7);
        b.insert_normal("w", vec![4, 4], 0.1, 7);
        assert_eq!(a.get("w").unwrap().tensor, b.get("w").unwrap().tensor);
        b.insert_normal("w2", vec![4, 4], 0.1, 7);
        assert_ne!(
            a.get("w").unwrap().tensor.values,
            b.get("w2").unwrap().tensor.values
        );
    }

    #[test]
    fn clone_prefix_deep_copies() {
        let mut s = ParamStore::new();
        s.insert_normal("student.w", vec![2, 2], 0.1, 1);
        s.clone_prefix("student.", "teacher.");
        assert_eq!(
            s.get("student.w").unwrap().tensor,
            s.get("teacher.w").unwrap().tensor
        );
        s.get_mut("student.w").unwrap().tensor.values[0] += 1.0;
        assert_ne!(
            s.get("student.w").unwrap().tensor.values,
            s.get("teacher.w").unwrap().tensor.values
        );
    }

    #[test]
    fn bind_and_collect_grads() {
        let mut s = ParamStore::new();
        s.insert_normal("w", vec![2, 2], 0.5, 3);
        s.insert_normal("frozen.w", vec![2, 2], 0.5, 4);
        let mut tape = Tape::new();
        let bound = bind_params(&s, &mut tape, &|n| !n.starts_with("frozen."));
        let w = bound.id("w");
        let loss = tape.sum_squares(w);
        tape.backward(loss).unwrap();
        let grads = collect_grads(&bound, &tape);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, "w");
    }
}
