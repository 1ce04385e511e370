//! Sampling: deterministic DDIM (default) and ancestral DDPM, plus the
//! end-to-end reconstruction path back to pixel space.

use mfe::params::ParamStore;
use numcore::graph::Graph;
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::codec::LatentCodec;
use crate::dit::DitModel;
use crate::schedule::NoiseSchedule;
use crate::{NldError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sampler {
    /// Deterministic, few-step.
    Ddim,
    /// Stochastic ancestral sampling over every schedule step.
    DdpmAncestral,
}

pub struct SampleOutcome {
    /// `[latent_tokens, latent_dim]` denoised latent.
    pub latent: Tensor<f32>,
    /// Denoiser invocations consumed (the resource contract).
    pub denoiser_calls: usize,
}

/// Evenly spaced descending timestep ladder for DDIM.
fn ddim_ladder(t_steps: usize, steps: usize) -> Vec<usize> {
    (0..steps)
        .map(|i| {
            let frac = (steps - i) as f64 / steps as f64;
            ((t_steps as f64) * frac).round().max(1.0) as usize
        })
        .collect()
}

fn predict_eps(
    model: &DitModel,
    store: &ParamStore,
    x_t: &Tensor<f32>,
    cond: Option<&Tensor<f32>>,
    t: usize,
) -> Result<Tensor<f32>> {
    let g = Graph::new();
    let bound = store.bind(&g);
    let tokens = model.config.latent_tokens;
    let dim = model.config.latent_dim;
    let xt_var = g.constant(x_t.reshape(&[1, tokens, dim]).map_err(|e| NldError::Numeric(e.to_string()))?);
    let cond_var = match cond {
        Some(c) => Some(g.constant(
            c.reshape(&[1, model.config.cond_tokens, model.config.cond_dim])
                .map_err(|e| NldError::Numeric(e.to_string()))?,
        )),
        None => None,
    };
    let eps = model.forward(&g, &bound, xt_var, cond_var, &[t])?;
    g.value(eps)
        .reshape(&[tokens, dim])
        .map_err(|e| NldError::Numeric(e.to_string()))
}

/// Runs the sampler from seeded Gaussian noise, conditioned on `z_b`
/// (`[cond_tokens, cond_dim]`, or `None` for the unconditional path).
pub fn sample_latent(
    model: &DitModel,
    schedule: &NoiseSchedule,
    cond: Option<&Tensor<f32>>,
    sampler: Sampler,
    steps: usize,
    seed: u64,
) -> Result<SampleOutcome> {
    let t_max = schedule.len();
    if steps == 0 || steps > t_max {
        return Err(NldError::Config(format!(
            "step count {steps} outside 1..={t_max}"
        )));
    }
    let tokens = model.config.latent_tokens;
    let dim = model.config.latent_dim;
    let mut rng = RngStream::new(seed, 0x5A3);
    let mut x = Tensor::from_fn(&[tokens, dim], |_| rng.normal_f64() as f32);
    let mut calls = 0usize;

    match sampler {
        Sampler::Ddim => {
            let ladder = ddim_ladder(t_max, steps);
            for (i, &t) in ladder.iter().enumerate() {
                let eps = predict_eps(model, &model.store, &x, cond, t)?;
                calls += 1;
                let ab_t = schedule.alpha_bar(t)?;
                let x0_hat = reconstruct_x0(&x, &eps, ab_t);
                let next_ab = match ladder.get(i + 1) {
                    Some(&t_next) => schedule.alpha_bar(t_next)?,
                    None => 1.0,
                };
                // deterministic DDIM update (η = 0)
                let (sa, sn) = (next_ab.sqrt() as f32, (1.0 - next_ab).sqrt() as f32);
                let data: Vec<f32> = x0_hat
                    .data()
                    .iter()
                    .zip(eps.data().iter())
                    .map(|(&x0, &e)| sa * x0 + sn * e)
                    .collect();
                x = Tensor::from_vec(&[tokens, dim], data)
                    .map_err(|e| NldError::Numeric(format!("DDIM diverged: {e}")))?;
            }
        }
        Sampler::DdpmAncestral => {
            if steps != t_max {
                return Err(NldError::Config(format!(
                    "ancestral sampling walks the full schedule ({t_max} steps), got {steps}"
                )));
            }
            for t in (1..=t_max).rev() {
                let eps = predict_eps(model, &model.store, &x, cond, t)?;
                calls += 1;
                let beta = schedule.betas[t - 1];
                let alpha = 1.0 - beta;
                let ab = schedule.alpha_bars[t - 1];
                let coef = (beta / (1.0 - ab).sqrt()) as f32;
                let inv_sqrt_alpha = (1.0 / alpha.sqrt()) as f32;
                let sigma = beta.sqrt() as f32;
                let data: Vec<f32> = x
                    .data()
                    .iter()
                    .zip(eps.data().iter())
                    .map(|(&xv, &e)| {
                        let mean = inv_sqrt_alpha * (xv - coef * e);
                        if t > 1 {
                            mean + sigma * rng.normal_f64() as f32
                        } else {
                            mean
                        }
                    })
                    .collect();
                x = Tensor::from_vec(&[tokens, dim], data)
                    .map_err(|e| NldError::Numeric(format!("ancestral sampling diverged: {e}")))?;
            }
        }
    }

    Ok(SampleOutcome {
        latent: x,
        denoiser_calls: calls,
    })
}

fn reconstruct_x0(x_t: &Tensor<f32>, eps: &Tensor<f32>, alpha_bar: f64) -> Tensor<f32> {
    let sab = alpha_bar.sqrt() as f32;
    let snab = (1.0 - alpha_bar).sqrt() as f32;
    let data: Vec<f32> = x_t
        .data()
        .iter()
        .zip(eps.data().iter())
        .map(|(&x, &e)| ((x - snab * e) / sab).clamp(-50.0, 50.0))
        .collect();
    Tensor::from_vec(x_t.shape(), data).expect("clamped values finite")
}

/// Samples a latent conditioned on `z_b`, decodes it, and maps pixels back
/// to `[0, 1]` (training latents encode videos rescaled to `[-1, 1]`).
pub fn reconstruct_video(
    model: &DitModel,
    codec: &LatentCodec,
    schedule: &NoiseSchedule,
    z_b: &Tensor<f32>,
    sampler: Sampler,
    steps: usize,
    seed: u64,
) -> Result<Tensor<f32>> {
    let out = sample_latent(model, schedule, Some(z_b), sampler, steps, seed)?;
    let centered = codec.decode(&out.latent)?;
    let video = centered.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0));
    Ok(video)
}

/// Maps a pixel video in `[0, 1]` to the centered latent the decoder trains
/// on.
pub fn encode_training_latent(codec: &LatentCodec, video: &Tensor<f32>) -> Result<Tensor<f32>> {
    codec.encode(&video.map(|v| v * 2.0 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::DitConfig;
    use crate::lora::LoraConfig;
    use crate::schedule::make_schedule;

    fn tiny() -> (DitModel, NoiseSchedule) {
        let model = DitModel::new(DitConfig {
            layers: 1,
            width: 16,
            heads: 2,
            mlp_hidden: 32,
            latent_dim: 12,
            latent_tokens: 4,
            cond_tokens: 2,
            cond_dim: 8,
            lora: LoraConfig { rank: 2, alpha: 2.0 },
            t_steps: 20,
            init_seed: 3,
        })
        .unwrap();
        let schedule = make_schedule(20, 1e-4, 0.02).unwrap();
        (model, schedule)
    }

    #[test]
    fn ddim_deterministic_and_counts_calls() {
        let (model, schedule) = tiny();
        let cond = Tensor::from_fn(&[2, 8], |i| i as f32 * 0.1);
        let a = sample_latent(&model, &schedule, Some(&cond), Sampler::Ddim, 5, 42).unwrap();
        let b = sample_latent(&model, &schedule, Some(&cond), Sampler::Ddim, 5, 42).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.denoiser_calls, 5);
    }

    #[test]
    fn step_count_beyond_schedule_rejected() {
        let (model, schedule) = tiny();
        assert!(sample_latent(&model, &schedule, None, Sampler::Ddim, 21, 1).is_err());
    }

    #[test]
    fn ancestral_full_walk() {
        let (model, schedule) = tiny();
        let out = sample_latent(&model, &schedule, None, Sampler::DdpmAncestral, 20, 7).unwrap();
        assert_eq!(out.denoiser_calls, 20);
        assert!(out.latent.is_finite());
    }

    #[test]
    fn ladder_descends_to_one() {
        let ladder = ddim_ladder(1000, 50);
        assert_eq!(ladder.len(), 50);
        assert_eq!(ladder[0], 1000);
        assert!(ladder.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*ladder.last().unwrap(), 20);
    }
}
