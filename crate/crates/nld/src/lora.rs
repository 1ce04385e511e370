//! Low-rank adapters: frozen base projection plus a trainable
//! `(α/r)·(x·A)·B` bypass, zero at initialization.

use mfe::params::{Bound, ParamStore};
use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::{NldError, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Registers a linear layer `{prefix}.w/.b` with adapters `{prefix}.lora.a`
/// (Gaussian, σ = 0.02) and `{prefix}.lora.b` (zeros). The base starts
/// trainable (for the warm-up phase); [`set_lora_only`] flips phases.
pub fn init_lora_linear(
    store: &mut ParamStore,
    rng: &mut RngStream,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    cfg: &LoraConfig,
) -> Result<()> {
    if cfg.rank == 0 || cfg.rank > d_in.min(d_out) {
        return Err(NldError::Config(format!(
            "LoRA rank {} out of range for {}×{}",
            cfg.rank, d_in, d_out
        )));
    }
    store.insert_gauss(&format!("{prefix}.w"), &[d_in, d_out], rng, true);
    store.insert_zeros(&format!("{prefix}.b"), &[d_out], true);
    store.insert_gauss(&format!("{prefix}.lora.a"), &[d_in, cfg.rank], rng, false);
    store.insert_zeros(&format!("{prefix}.lora.b"), &[cfg.rank, d_out], false);
    Ok(())
}

/// `y = x·W + b + (α/r)·(x·A)·B`.
pub fn lora_linear(
    g: &Graph<f32>,
    p: &Bound,
    prefix: &str,
    x: Var,
    cfg: &LoraConfig,
) -> Result<Var> {
    let base = g.add_bcast(
        g.matmul(x, p.var(&format!("{prefix}.w"))?)?,
        p.var(&format!("{prefix}.b"))?,
    )?;
    let down = g.matmul(x, p.var(&format!("{prefix}.lora.a"))?)?;
    let up = g.matmul(down, p.var(&format!("{prefix}.lora.b"))?)?;
    let scaled = g.scale(up, cfg.scaling() as f32);
    Ok(g.add(base, scaled)?)
}

/// Effective merged weight `W' = W + (α/r)·A·B` (oracle for the
/// merged-vs-unmerged equivalence checks).
pub fn merged_weight(store: &ParamStore, prefix: &str, cfg: &LoraConfig) -> Result<Tensor<f32>> {
    let w = store.get(&format!("{prefix}.w"))?;
    let a = store.get(&format!("{prefix}.lora.a"))?;
    let b = store.get(&format!("{prefix}.lora.b"))?;
    let delta = a
        .matmul(b)
        .map_err(|e| NldError::Numeric(e.to_string()))?
        .scale(cfg.scaling() as f32);
    w.add(&delta).map_err(|e| NldError::Numeric(e.to_string()))
}

/// Phase switch: freeze base weights, unfreeze adapters (or the reverse).
pub fn set_lora_only(store: &mut ParamStore, prefix: &str, lora_only: bool) -> Result<()> {
    store.set_trainable(&format!("{prefix}.w"), !lora_only).map_err(NldError::from)?;
    store.set_trainable(&format!("{prefix}.b"), !lora_only).map_err(NldError::from)?;
    store.set_trainable(&format!("{prefix}.lora.a"), lora_only).map_err(NldError::from)?;
    store.set_trainable(&format!("{prefix}.lora.b"), lora_only).map_err(NldError::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_layer(d_in: usize, d_out: usize, cfg: &LoraConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, 0);
        init_lora_linear(&mut store, &mut rng, "lin", d_in, d_out, cfg).unwrap();
        store
    }

    #[test]
    fn zero_init_adapter_is_identity_bitwise() {
        let cfg = LoraConfig { rank: 4, alpha: 4.0 };
        let store = store_with_layer(8, 6, &cfg, 1);
        let g = Graph::new();
        let p = store.bind(&g);
        let mut rng = RngStream::new(2, 0);
        let x = g.constant(Tensor::from_fn(&[3, 8], |_| rng.normal_f64() as f32));

        let with_lora = g.value(lora_linear(&g, &p, "lin", x, &cfg).unwrap());
        let base = g.value(
            g.add_bcast(g.matmul(x, p.var("lin.w").unwrap()).unwrap(), p.var("lin.b").unwrap())
                .unwrap(),
        );
        assert_eq!(with_lora, base);
    }

    #[test]
    fn merged_equals_unmerged() {
        let cfg = LoraConfig { rank: 3, alpha: 6.0 };
        let mut store = store_with_layer(10, 7, &cfg, 3);
        // give the adapter real content
        let mut rng = RngStream::new(4, 0);
        store
            .set("lin.lora.b", Tensor::from_fn(&[3, 7], |_| (rng.normal_f64() * 0.1) as f32))
            .unwrap();

        let g = Graph::new();
        let p = store.bind(&g);
        let x = g.constant(Tensor::from_fn(&[5, 10], |_| rng.normal_f64() as f32));
        let unmerged = g.value(lora_linear(&g, &p, "lin", x, &cfg).unwrap());

        let merged = merged_weight(&store, "lin", &cfg).unwrap();
        let direct = g.value(
            g.add_bcast(g.matmul(x, g.constant(merged)).unwrap(), p.var("lin.b").unwrap())
                .unwrap(),
        );
        let max_err = unmerged
            .data()
            .iter()
            .zip(direct.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1e-5, "merge mismatch {max_err}");
    }

    #[test]
    fn paper_scaling_is_unity() {
        let cfg = LoraConfig { rank: 64, alpha: 64.0 };
        assert_eq!(cfg.scaling(), 1.0);
    }

    #[test]
    fn oversized_rank_rejected() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(5, 0);
        let cfg = LoraConfig { rank: 9, alpha: 9.0 };
        assert!(init_lora_linear(&mut store, &mut rng, "lin", 8, 16, &cfg).is_err());
    }

    #[test]
    fn phase_switch_flips_trainability() {
        let cfg = LoraConfig { rank: 2, alpha: 2.0 };
        let mut store = store_with_layer(4, 4, &cfg, 6);
        assert!(store.is_trainable("lin.w"));
        assert!(!store.is_trainable("lin.lora.a"));
        set_lora_only(&mut store, "lin", true).unwrap();
        assert!(!store.is_trainable("lin.w"));
        assert!(store.is_trainable("lin.lora.a"));
        assert!(store.is_trainable("lin.lora.b"));
    }
}
