//! DiT-lite denoiser: transformer blocks over `[condition tokens ‖ noised
//! latent tokens]` with sinusoidal timestep embeddings added to every token
//! and LoRA adapters on every attention and feed-forward projection.

use serde::{Deserialize, Serialize};

use mfe::params::{Bound, ParamStore};
use mfe::transformer::LN_EPS;
use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::lora::{init_lora_linear, lora_linear, set_lora_only, LoraConfig};
use crate::{NldError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DitConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Codec patch dimension (latent token width).
    pub latent_dim: usize,
    pub latent_tokens: usize,
    /// Conditioning slot geometry; must match the encoder's z_b.
    pub cond_tokens: usize,
    pub cond_dim: usize,
    pub lora: LoraConfig,
    pub t_steps: usize,
    pub init_seed: u64,
}

impl DitConfig {
    pub fn desk(latent_tokens: usize, latent_dim: usize, cond_tokens: usize, cond_dim: usize) -> Self {
        Self {
            layers: 4,
            width: 128,
            heads: 4,
            mlp_hidden: 256,
            latent_dim,
            latent_tokens,
            cond_tokens,
            cond_dim,
            lora: LoraConfig { rank: 4, alpha: 4.0 },
            t_steps: 1000,
            init_seed: 0xD17,
        }
    }
}

/// Training phase: warm-up trains the base unconditionally; the conditional
/// phase freezes base transformer weights and trains adapters plus the
/// projections that have no pretrained base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Conditional,
}

pub struct DitModel {
    pub config: DitConfig,
    pub store: ParamStore,
}

const LORA_LAYERS: [&str; 4] = ["attn.qkv", "attn.out", "mlp.fc1", "mlp.fc2"];

impl DitModel {
    pub fn new(config: DitConfig) -> Result<Self> {
        if config.width % config.heads != 0 {
            return Err(NldError::Config(format!(
                "width {} not divisible by heads {}",
                config.width, config.heads
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(config.init_seed, 0);
        let w = config.width;

        store.insert_gauss("in.w", &[config.latent_dim, w], &mut rng, true);
        store.insert_zeros("in.b", &[w], true);
        store.insert_gauss("cond.w", &[config.cond_dim, w], &mut rng, true);
        store.insert_zeros("cond.b", &[w], true);
        store.insert_gauss("pos.lat", &[config.latent_tokens, w], &mut rng, true);
        store.insert_gauss("pos.cond", &[config.cond_tokens, w], &mut rng, true);
        store.insert_gauss("time.w1", &[w, w], &mut rng, true);
        store.insert_zeros("time.b1", &[w], true);
        store.insert_gauss("time.w2", &[w, w], &mut rng, true);
        store.insert_zeros("time.b2", &[w], true);

        for i in 0..config.layers {
            let p = format!("blk.{i}");
            init_lora_linear(&mut store, &mut rng, &format!("{p}.attn.qkv"), w, 3 * w, &config.lora)?;
            init_lora_linear(&mut store, &mut rng, &format!("{p}.attn.out"), w, w, &config.lora)?;
            init_lora_linear(&mut store, &mut rng, &format!("{p}.mlp.fc1"), w, config.mlp_hidden, &config.lora)?;
            init_lora_linear(&mut store, &mut rng, &format!("{p}.mlp.fc2"), config.mlp_hidden, w, &config.lora)?;
            store.insert_ones(&format!("{p}.ln1.g"), &[w], true);
            store.insert_zeros(&format!("{p}.ln1.b"), &[w], true);
            store.insert_ones(&format!("{p}.ln2.g"), &[w], true);
            store.insert_zeros(&format!("{p}.ln2.b"), &[w], true);
            // adaptive LN modulation from the timestep embedding; zero init
            // leaves the block unmodulated at the start of training
            store.insert_zeros(&format!("{p}.ada1.w"), &[w, 2 * w], true);
            store.insert_zeros(&format!("{p}.ada1.b"), &[2 * w], true);
            store.insert_zeros(&format!("{p}.ada2.w"), &[w, 2 * w], true);
            store.insert_zeros(&format!("{p}.ada2.b"), &[2 * w], true);
        }

        store.insert_ones("out.ln.g", &[w], true);
        store.insert_zeros("out.ln.b", &[w], true);
        store.insert_gauss("out.w", &[w, config.latent_dim], &mut rng, true);
        store.insert_zeros("out.b", &[config.latent_dim], true);

        let mut model = Self { config, store };
        model.set_phase(Phase::Warmup)?;
        Ok(model)
    }

    pub fn from_store(config: DitConfig, store: ParamStore) -> Self {
        Self { config, store }
    }

    /// Names of the pretrained-base weights frozen in the conditional phase.
    pub fn base_param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.config.layers {
            let p = format!("blk.{i}");
            for layer in LORA_LAYERS {
                names.push(format!("{p}.{layer}.w"));
                names.push(format!("{p}.{layer}.b"));
            }
            for ln in ["ln1", "ln2"] {
                names.push(format!("{p}.{ln}.g"));
                names.push(format!("{p}.{ln}.b"));
            }
            for ada in ["ada1", "ada2"] {
                names.push(format!("{p}.{ada}.w"));
                names.push(format!("{p}.{ada}.b"));
            }
        }
        names
    }

    pub fn set_phase(&mut self, phase: Phase) -> Result<()> {
        let lora_only = phase == Phase::Conditional;
        for i in 0..self.config.layers {
            let p = format!("blk.{i}");
            for layer in LORA_LAYERS {
                set_lora_only(&mut self.store, &format!("{p}.{layer}"), lora_only)?;
            }
            for ln in ["ln1", "ln2"] {
                self.store.set_trainable(&format!("{p}.{ln}.g"), !lora_only)?;
                self.store.set_trainable(&format!("{p}.{ln}.b"), !lora_only)?;
            }
            for ada in ["ada1", "ada2"] {
                self.store.set_trainable(&format!("{p}.{ada}.w"), !lora_only)?;
                self.store.set_trainable(&format!("{p}.{ada}.b"), !lora_only)?;
            }
        }
        Ok(())
    }

    /// Sinusoidal timestep features for a batch of 1-based timesteps.
    pub fn timestep_features(&self, ts: &[usize]) -> Tensor<f32> {
        let w = self.config.width;
        let half = w / 2;
        let mut out = vec![0.0f32; ts.len() * w];
        for (i, &t) in ts.iter().enumerate() {
            for k in 0..half {
                let freq = (10_000f64).powf(-(k as f64) / half as f64);
                let angle = t as f64 * freq;
                out[i * w + k] = angle.sin() as f32;
                out[i * w + half + k] = angle.cos() as f32;
            }
        }
        Tensor::from_vec(&[ts.len(), w], out).expect("finite features")
    }

    /// Predicts ε̂ for noised latents. `z_b` carries the conditioning tokens;
    /// `None` runs the unconditional (warm-up) path. Output matches the
    /// latent token shape regardless of the conditioning length.
    pub fn forward(
        &self,
        g: &Graph<f32>,
        p: &Bound,
        x_t: Var,
        z_b: Option<Var>,
        ts: &[usize],
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = g.shape(x_t);
        if shape.len() != 3 || shape[1] != cfg.latent_tokens || shape[2] != cfg.latent_dim {
            return Err(NldError::Config(format!(
                "x_t shape {:?}, denoiser expects [B, {}, {}]",
                shape, cfg.latent_tokens, cfg.latent_dim
            )));
        }
        let batch = shape[0];
        if ts.len() != batch {
            return Err(NldError::Config(format!(
                "{} timesteps for a batch of {batch}",
                ts.len()
            )));
        }
        if let Some(&bad) = ts.iter().find(|&&t| t == 0 || t > cfg.t_steps) {
            return Err(NldError::Config(format!(
                "timestep {bad} outside 1..={}",
                cfg.t_steps
            )));
        }

        let lat = g.add_bcast(g.matmul(x_t, p.var("in.w")?)?, p.var("in.b")?)?;
        let lat = g.add_bcast(lat, p.var("pos.lat")?)?;

        let (mut seq, cond_len) = match z_b {
            Some(cond) => {
                let cshape = g.shape(cond);
                if cshape.len() != 3 || cshape[0] != batch || cshape[2] != cfg.cond_dim {
                    return Err(NldError::Config(format!(
                        "conditioning shape {:?}, expected [B, {}, {}]",
                        cshape, cfg.cond_tokens, cfg.cond_dim
                    )));
                }
                if cshape[1] != cfg.cond_tokens {
                    return Err(NldError::Config(format!(
                        "conditioning tokens {} != configured slot {}",
                        cshape[1], cfg.cond_tokens
                    )));
                }
                let c = g.add_bcast(g.matmul(cond, p.var("cond.w")?)?, p.var("cond.b")?)?;
                let c = g.add_bcast(c, p.var("pos.cond")?)?;
                (g.concat(&[c, lat], 1)?, cfg.cond_tokens)
            }
            None => (lat, 0),
        };

        // timestep embedding added to every token
        let feat = g.constant(self.timestep_features(ts));
        let t1 = g.gelu(g.add_bcast(g.matmul(feat, p.var("time.w1")?)?, p.var("time.b1")?)?);
        let temb = g.add_bcast(g.matmul(t1, p.var("time.w2")?)?, p.var("time.b2")?)?;
        seq = g.add_bcast_rows(seq, temb)?;

        for i in 0..cfg.layers {
            seq = self.block(g, p, &format!("blk.{i}"), seq, temb)?;
        }

        let latent_out = g.narrow(seq, 1, cond_len, cfg.latent_tokens)?;
        let normed = g.layer_norm(latent_out, p.var("out.ln.g")?, p.var("out.ln.b")?, LN_EPS)?;
        Ok(g.add_bcast(g.matmul(normed, p.var("out.w")?)?, p.var("out.b")?)?)
    }

    /// Pre-norm block with adaptive LN modulation by the timestep embedding:
    /// `h = LN(x)·(1+γ(temb)) + β(temb)` feeding each sublayer.
    fn block(&self, g: &Graph<f32>, p: &Bound, prefix: &str, x: Var, temb: Var) -> Result<Var> {
        let cfg = &self.config;
        let w = cfg.width;
        let normed = g.layer_norm(x, p.var(&format!("{prefix}.ln1.g"))?, p.var(&format!("{prefix}.ln1.b"))?, LN_EPS)?;
        let normed = self.modulate(g, p, &format!("{prefix}.ada1"), normed, temb)?;
        let qkv = lora_linear(g, p, &format!("{prefix}.attn.qkv"), normed, &cfg.lora)?;
        let q = g.split_heads(g.narrow(qkv, 2, 0, w)?, cfg.heads)?;
        let k = g.split_heads(g.narrow(qkv, 2, w, w)?, cfg.heads)?;
        let v = g.split_heads(g.narrow(qkv, 2, 2 * w, w)?, cfg.heads)?;
        let scale = 1.0 / ((w / cfg.heads) as f32).sqrt();
        let ctx = g.merge_heads(g.attention(q, k, v, scale)?, cfg.heads)?;
        let attn = lora_linear(g, p, &format!("{prefix}.attn.out"), ctx, &cfg.lora)?;
        let x = g.add(x, attn)?;

        let normed = g.layer_norm(x, p.var(&format!("{prefix}.ln2.g"))?, p.var(&format!("{prefix}.ln2.b"))?, LN_EPS)?;
        let normed = self.modulate(g, p, &format!("{prefix}.ada2"), normed, temb)?;
        let h = g.gelu(lora_linear(g, p, &format!("{prefix}.mlp.fc1"), normed, &cfg.lora)?);
        let m = lora_linear(g, p, &format!("{prefix}.mlp.fc2"), h, &cfg.lora)?;
        Ok(g.add(x, m)?)
    }

    /// `normed·(1+γ) + β`, with γ/β projected from the timestep embedding.
    fn modulate(&self, g: &Graph<f32>, p: &Bound, prefix: &str, normed: Var, temb: Var) -> Result<Var> {
        let w = self.config.width;
        let gb = g.add_bcast(g.matmul(temb, p.var(&format!("{prefix}.w"))?)?, p.var(&format!("{prefix}.b"))?)?;
        let gamma = g.narrow(gb, 1, 0, w)?;
        let beta = g.narrow(gb, 1, w, w)?;
        let ones = g.constant(Tensor::ones(&g.shape(gamma)));
        let scale = g.add(ones, gamma)?;
        let scaled = g.mul_bcast_rows(normed, scale)?;
        Ok(g.add_bcast_rows(scaled, beta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> DitModel {
        DitModel::new(DitConfig {
            layers: 2,
            width: 16,
            heads: 4,
            mlp_hidden: 32,
            latent_dim: 12,
            latent_tokens: 6,
            cond_tokens: 3,
            cond_dim: 8,
            lora: LoraConfig { rank: 2, alpha: 2.0 },
            t_steps: 100,
            init_seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn output_matches_latent_slot_with_and_without_condition() {
        let model = tiny_model();
        let g = Graph::new();
        let p = model.store.bind(&g);
        let mut rng = RngStream::new(2, 0);
        let x_t = g.constant(Tensor::from_fn(&[2, 6, 12], |_| rng.normal_f64() as f32));
        let cond = g.constant(Tensor::from_fn(&[2, 3, 8], |_| rng.normal_f64() as f32));

        let eps_uncond = model.forward(&g, &p, x_t, None, &[5, 50]).unwrap();
        assert_eq!(g.shape(eps_uncond), vec![2, 6, 12]);
        let eps_cond = model.forward(&g, &p, x_t, Some(cond), &[5, 50]).unwrap();
        assert_eq!(g.shape(eps_cond), vec![2, 6, 12]);
    }

    #[test]
    fn conditioning_changes_output() {
        let model = tiny_model();
        let g = Graph::new();
        let p = model.store.bind(&g);
        let mut rng = RngStream::new(3, 0);
        let x_t = g.constant(Tensor::from_fn(&[1, 6, 12], |_| rng.normal_f64() as f32));
        let cond_a = g.constant(Tensor::from_fn(&[1, 3, 8], |_| rng.normal_f64() as f32));
        let cond_b = g.constant(Tensor::from_fn(&[1, 3, 8], |_| rng.normal_f64() as f32));
        let ea = g.value(model.forward(&g, &p, x_t, Some(cond_a), &[7]).unwrap());
        let eb = g.value(model.forward(&g, &p, x_t, Some(cond_b), &[7]).unwrap());
        let diff: f32 = ea
            .data()
            .iter()
            .zip(eb.data().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-4, "conditioning sensitivity {diff}");
    }

    #[test]
    fn timestep_out_of_range_rejected() {
        let model = tiny_model();
        let g = Graph::new();
        let p = model.store.bind(&g);
        let x_t = g.constant(Tensor::zeros(&[1, 6, 12]));
        assert!(model.forward(&g, &p, x_t, None, &[0]).is_err());
        assert!(model.forward(&g, &p, x_t, None, &[101]).is_err());
    }

    #[test]
    fn phase_switch_freezes_base() {
        let mut model = tiny_model();
        model.set_phase(Phase::Conditional).unwrap();
        for name in model.base_param_names() {
            assert!(!model.store.is_trainable(&name), "{name} should be frozen");
        }
        assert!(model.store.is_trainable("blk.0.attn.qkv.lora.a"));
        assert!(model.store.is_trainable("in.w"));
        assert!(model.store.is_trainable("cond.w"));
        assert!(model.store.is_trainable("time.w1"));
    }
}
