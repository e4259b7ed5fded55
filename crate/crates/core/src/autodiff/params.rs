use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Slot {
    fn new(value: Tensor) -> Self {
        let [r, c] = value.shape;
        Slot {
            value,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        }
    }
}

/// Named parameters with Adam state and a frozen-name set.
///
/// Each parameter draws its initial values from a stream keyed by the store
/// seed and the parameter name, so adding or removing one parameter never
/// changes the initial values of the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    seed: u64,
    slots: BTreeMap<String, Slot>,
    frozen: BTreeSet<String>,
    steps: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            slots: BTreeMap::new(),
            frozen: BTreeSet::new(),
            steps: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<(), AutodiffError> {
        let value = match init {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Glorot => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
                Tensor::from_vec(rows, cols, data)?
            }
        };
        self.insert(name, value)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        if self.slots.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        self.slots.insert(name.to_string(), Slot::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    /// Overwrite a value in place; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if slot.value.shape != value.shape {
            return Err(AutodiffError::Shape(format!(
                "{name}: {:?} replaced by {:?}",
                slot.value.shape, value.shape
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn freeze(&mut self, name: &str) -> Result<(), AutodiffError> {
        if !self.slots.contains_key(name) {
            return Err(AutodiffError::UnknownParam(name.to_string()));
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    /// Freeze every parameter whose name starts with `prefix`; returns how many matched.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let hits: Vec<String> = self.slots.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let n = hits.len();
        self.frozen.extend(hits);
        n
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Drop optimizer moments and the step counter; values are kept.
    pub fn reset_optimizer(&mut self) {
        for s in self.slots.values_mut() {
            let [r, c] = s.value.shape;
            s.m = Tensor::zeros(r, c);
            s.v = Tensor::zeros(r, c);
        }
        self.steps = 0;
    }
}

/// Gradients by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads(BTreeMap<String, Tensor>);

impl Grads {
    pub fn accumulate(&mut self, name: &str, g: &Tensor) {
        match self.0.get_mut(name) {
            Some(t) => t.add_assign(g),
            None => {
                self.0.insert(name.to_string(), g.clone());
            }
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (k, g) in &other.0 {
            self.accumulate(k, g);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.0.values_mut() {
            g.scale_assign(k);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, t)| (k.as_str(), t))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Frozen parameters and parameters absent
/// from `grads` are left untouched, moments included.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, cfg: &AdamConfig) -> Result<(), AutodiffError> {
    for (name, g) in grads.iter() {
        let slot = store
            .slots
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if slot.value.shape != g.shape {
            return Err(AutodiffError::Shape(format!("{name}: gradient {:?} for {:?}", g.shape, slot.value.shape)));
        }
        if !g.is_finite() {
            return Err(AutodiffError::NonFiniteGradient(name.to_string()));
        }
    }
    store.steps += 1;
    let t = store.steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads.iter() {
        if store.frozen.contains(name) {
            continue;
        }
        let slot = store.slots.get_mut(name).expect("checked above");
        for i in 0..g.data.len() {
            let gi = g.data[i];
            let m = cfg.beta1 * slot.m.data[i] + (1.0 - cfg.beta1) * gi;
            let v = cfg.beta2 * slot.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            slot.m.data[i] = m;
            slot.v.data[i] = v;
            slot.value.data[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
