//! Named parameter store shared by the encoder and (through reuse) the
//! decoder: ordered tensors with trainable flags, AdamW moments, and a
//! per-step binding onto an autodiff graph.

use std::collections::BTreeMap;

use numcore::graph::{Gradients, Graph, Var};
use numcore::optim::{adamw_step, AdamWParams, AdamWState};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::{MfeError, Result};

struct Entry {
    value: Tensor<f32>,
    trainable: bool,
    state: AdamWState<f32>,
}

/// Ordered, name-addressed parameter set.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    entries: BTreeMap<String, Entry>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<f32>, trainable: bool) {
        let shape = value.shape().to_vec();
        if self
            .entries
            .insert(
                name.to_string(),
                Entry {
                    value,
                    trainable,
                    state: AdamWState::new(&shape),
                },
            )
            .is_none()
        {
            self.names.push(name.to_string());
        }
    }

    /// Gaussian-initialized weight, σ = 0.02.
    pub fn insert_gauss(&mut self, name: &str, shape: &[usize], rng: &mut RngStream, trainable: bool) {
        let t = Tensor::from_fn(shape, |_| (rng.normal_f64() * 0.02) as f32);
        self.insert(name, t, trainable);
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize], trainable: bool) {
        self.insert(name, Tensor::zeros(shape), trainable);
    }

    pub fn insert_ones(&mut self, name: &str, shape: &[usize], trainable: bool) {
        self.insert(name, Tensor::ones(shape), trainable);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| MfeError::Param(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<f32>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| MfeError::Param(format!("unknown parameter {name}")))?;
        if entry.value.shape() != value.shape() {
            return Err(MfeError::Param(format!(
                "shape mismatch setting {name}: {:?} vs {:?}",
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| MfeError::Param(format!("unknown parameter {name}")))
    }

    /// Names in insertion order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn total_params(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn trainable_params(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Records every parameter as a leaf on `graph`; trainable entries become
    /// gradient targets.
    pub fn bind(&self, graph: &Graph<f32>) -> Bound {
        let mut vars = BTreeMap::new();
        for name in &self.names {
            let e = &self.entries[name];
            vars.insert(name.clone(), graph.leaf(e.value.clone(), e.trainable));
        }
        Bound { vars }
    }

    /// Applies one AdamW update to every trainable parameter that received a
    /// gradient. Returns the global gradient norm (over updated entries).
    pub fn apply_gradients(
        &mut self,
        bound: &Bound,
        grads: &Gradients<f32>,
        hp: &AdamWParams,
    ) -> Result<f64> {
        let mut sq_norm = 0.0f64;
        for name in self.names.clone() {
            let entry = self.entries.get_mut(&name).expect("known name");
            if !entry.trainable {
                continue;
            }
            let var = bound.var(&name)?;
            let Some(grad) = grads.get(var) else { continue };
            for &g in grad.data() {
                sq_norm += (g as f64) * (g as f64);
            }
            adamw_step(&mut entry.value, grad, &mut entry.state, hp)
                .map_err(|e| MfeError::Numeric(e.to_string()))?;
        }
        self.step += 1;
        Ok(sq_norm.sqrt())
    }

    /// Clamps a scalar parameter into `[lo, hi]` (used for the temperature).
    pub fn clamp_scalar(&mut self, name: &str, lo: f32, hi: f32) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| MfeError::Param(format!("unknown parameter {name}")))?;
        let v = entry.value.item().clamp(lo, hi);
        entry.value = Tensor::scalar(v);
        Ok(())
    }

    /// Snapshot of values + optimizer state, for checkpointing.
    pub fn export(&self) -> Vec<(String, Tensor<f32>, bool, AdamWState<f32>)> {
        self.names
            .iter()
            .map(|n| {
                let e = &self.entries[n];
                (n.clone(), e.value.clone(), e.trainable, e.state.clone())
            })
            .collect()
    }

    pub fn import(
        entries: Vec<(String, Tensor<f32>, bool, AdamWState<f32>)>,
        step: u64,
    ) -> Self {
        let mut store = Self::new();
        for (name, value, trainable, state) in entries {
            store.insert(&name, value, trainable);
            store.entries.get_mut(&name).expect("just inserted").state = state;
        }
        store.step = step;
        store
    }
}

/// Per-graph binding of parameter names to tape variables.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| MfeError::Param(format!("unbound parameter {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_entries_never_update() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        store.insert("frozen", Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap(), false);

        let g = Graph::new();
        let bound = store.bind(&g);
        let w = bound.var("w").unwrap();
        let f = bound.var("frozen").unwrap();
        let s = g.add(w, f).unwrap();
        let sq = g.mul(s, s).unwrap();
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        store
            .apply_gradients(&bound, &grads, &AdamWParams::default())
            .unwrap();

        assert_eq!(store.get("frozen").unwrap().to_vec(), vec![3.0, 4.0]);
        assert_ne!(store.get("w").unwrap().to_vec(), vec![1.0, 2.0]);
        assert_eq!(store.step, 1);
    }

    #[test]
    fn clamp_scalar_bounds() {
        let mut store = ParamStore::new();
        store.insert("t", Tensor::scalar(5.0), true);
        store.clamp_scalar("t", 0.01, 1.0).unwrap();
        assert_eq!(store.get("t").unwrap().item(), 1.0);
    }
}
