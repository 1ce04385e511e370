//! Diffusion training: stratified uniform timestep sampling, the standard
//! ε-prediction loss, and the two-phase decoder training loop (unconditional
//! warm-up of the base, then LoRA-carried conditional adaptation).

use serde::{Deserialize, Serialize};

use mfe::params::ParamStore;
use numcore::graph::Graph;
use numcore::optim::AdamWParams;
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::dit::{DitModel, Phase};
use crate::schedule::{forward_diffuse, NoiseSchedule};
use crate::{NldError, Result};

/// Timestep draw for one batch. Stratified mode (the default reading of
/// "explicit uniform") draws one t from each of `batch` equal-width bins of
/// `{1..T}`; the plain mode draws i.i.d. uniforms.
pub fn sample_timesteps(t_steps: usize, batch: usize, stratified: bool, rng: &mut RngStream) -> Vec<usize> {
    if !stratified {
        return (0..batch).map(|_| 1 + rng.below(t_steps as u64) as usize).collect();
    }
    (0..batch)
        .map(|i| {
            let lo = (i as f64) * t_steps as f64 / batch as f64;
            let hi = ((i + 1) as f64) * t_steps as f64 / batch as f64;
            let width = (hi - lo).max(1.0);
            let t = 1 + (lo + rng.uniform_f64() * width).floor() as usize;
            t.min(t_steps)
        })
        .collect()
}

/// One diffusion loss evaluation over a batch of latents. Returns the loss
/// node value plus the graph/bound for the caller to backprop.
pub struct DiffusionBatch {
    pub ts: Vec<usize>,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoderTrainConfig {
    pub warmup_steps: usize,
    pub conditional_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub stratified_timesteps: bool,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 300,
            conditional_steps: 700,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            stratified_timesteps: true,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: String,
    pub loss: f64,
}

pub struct DecoderTrainOutcome {
    pub model: DitModel,
    pub log: Vec<StepRecord>,
    pub aborted: Option<String>,
}

/// Computes the ε-prediction loss for given latents/conditions on a fresh
/// graph and applies one optimizer step.
#[allow(clippy::too_many_arguments)]
fn training_step(
    model: &mut DitModel,
    x0s: &[&Tensor<f32>],
    conds: Option<&[&Tensor<f32>]>,
    schedule: &NoiseSchedule,
    hp: &AdamWParams,
    stratified: bool,
    rng: &mut RngStream,
) -> Result<f64> {
    let batch = x0s.len();
    let ts = sample_timesteps(schedule.len(), batch, stratified, rng);

    // x_t and ε assembled outside the graph (data, not parameters)
    let mut xt_parts = Vec::with_capacity(batch);
    let mut eps_parts = Vec::with_capacity(batch);
    for (i, x0) in x0s.iter().enumerate() {
        let eps = Tensor::from_fn(x0.shape(), |_| rng.normal_f64() as f32);
        let xt = forward_diffuse(x0, ts[i], schedule, &eps)?;
        xt_parts.push(xt);
        eps_parts.push(eps);
    }
    let xt = Tensor::stack(&xt_parts).map_err(|e| NldError::Numeric(e.to_string()))?;
    let eps = Tensor::stack(&eps_parts).map_err(|e| NldError::Numeric(e.to_string()))?;

    let g = Graph::new();
    let bound = model.store.bind(&g);
    let xt_var = g.constant(xt);
    let cond_var = match conds {
        Some(list) => {
            let stacked = Tensor::stack(&list.iter().map(|t| (*t).clone()).collect::<Vec<_>>())
                .map_err(|e| NldError::Numeric(e.to_string()))?;
            Some(g.constant(stacked))
        }
        None => None,
    };
    let eps_hat = model.forward(&g, &bound, xt_var, cond_var, &ts)?;
    let target = g.constant(eps);
    let loss = g.mse(eps_hat, target)?;
    let loss_value = g.value(loss).item() as f64;
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = g.backward(loss)?;
    model.store.apply_gradients(&bound, &grads, hp)?;
    Ok(loss_value)
}

/// Two-phase decoder training over per-clip latents (`x0`) and conditioning
/// token grids (`z_b`), both precomputed with the encoder frozen.
pub fn train_decoder(
    mut model: DitModel,
    x0s: &[Tensor<f32>],
    conds: &[Tensor<f32>],
    schedule: &NoiseSchedule,
    tc: &DecoderTrainConfig,
) -> Result<DecoderTrainOutcome> {
    if x0s.is_empty() || x0s.len() != conds.len() {
        return Err(NldError::Config(format!(
            "{} latents vs {} conditions",
            x0s.len(),
            conds.len()
        )));
    }
    let hp = AdamWParams {
        lr: tc.lr,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: tc.weight_decay,
    };
    let mut rng = RngStream::new(tc.seed, 0xD1FF);
    let mut order_rng = RngStream::new(tc.seed, 0x0D0E);
    let mut log = Vec::new();
    let mut snapshot = (model.store.export(), model.store.step);

    for (phase, steps, label) in [
        (Phase::Warmup, tc.warmup_steps, "warmup"),
        (Phase::Conditional, tc.conditional_steps, "conditional"),
    ] {
        model.set_phase(phase)?;
        let mut order: Vec<usize> = (0..x0s.len()).collect();
        let mut cursor = order.len(); // exhausted: reshuffle on first step
        for step in 0..steps {
            if cursor + tc.batch_size > order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            let batch_idx = &order[cursor..(cursor + tc.batch_size).min(order.len())];
            cursor += tc.batch_size;

            let x0_refs: Vec<&Tensor<f32>> = batch_idx.iter().map(|&i| &x0s[i]).collect();
            let cond_refs: Vec<&Tensor<f32>> = batch_idx.iter().map(|&i| &conds[i]).collect();
            let conds_opt = (phase == Phase::Conditional).then_some(cond_refs.as_slice());
            let loss = training_step(
                &mut model,
                &x0_refs,
                conds_opt,
                schedule,
                &hp,
                tc.stratified_timesteps,
                &mut rng,
            )?;
            if !loss.is_finite() {
                let (entries, step_count) = snapshot;
                model.store = ParamStore::import(entries, step_count);
                return Ok(DecoderTrainOutcome {
                    model,
                    log,
                    aborted: Some(format!("non-finite loss in {label} step {step}")),
                });
            }
            log.push(StepRecord {
                step,
                phase: label.to_string(),
                loss,
            });
            if step % 50 == 49 {
                snapshot = (model.store.export(), model.store.step);
            }
        }
        snapshot = (model.store.export(), model.store.step);
    }

    Ok(DecoderTrainOutcome {
        model,
        log,
        aborted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;

    #[test]
    fn stratified_covers_bins() {
        let mut rng = RngStream::new(1, 0);
        let ts = sample_timesteps(1000, 10, true, &mut rng);
        assert_eq!(ts.len(), 10);
        for (i, &t) in ts.iter().enumerate() {
            let lo = 1 + i * 100;
            let hi = (i + 1) * 100;
            assert!(t >= lo && t <= hi, "bin {i}: t={t} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn iid_within_range() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..100 {
            let ts = sample_timesteps(50, 4, false, &mut rng);
            assert!(ts.iter().all(|&t| (1..=50).contains(&t)));
        }
    }

    #[test]
    fn perfect_denoiser_zero_loss_and_zero_denoiser_unit_loss() {
        // oracle doubles for the loss identity: if ε̂ ≡ ε the loss is 0; if
        // ε̂ ≡ 0 the loss approaches E‖ε‖²/n = 1
        let schedule = make_schedule(100, 1e-4, 0.02).unwrap();
        let mut rng = RngStream::new(3, 0);
        let mut zero_gap = 0.0f64;
        let n_trials = 200;
        let mut acc = 0.0f64;
        for _ in 0..n_trials {
            let x0 = Tensor::from_fn(&[16], |_| rng.normal_f64() as f32);
            let eps = Tensor::from_fn(&[16], |_| rng.normal_f64() as f32);
            let t = 1 + rng.below(100) as usize;
            let _xt = forward_diffuse(&x0, t, &schedule, &eps).unwrap();
            // ε̂ ≡ ε
            let perfect: f64 = eps
                .data()
                .iter()
                .map(|&e| {
                    let d = e - e;
                    (d * d) as f64
                })
                .sum();
            zero_gap += perfect;
            // ε̂ ≡ 0
            let zero: f64 = eps.data().iter().map(|&e| (e * e) as f64).sum::<f64>() / 16.0;
            acc += zero;
        }
        assert_eq!(zero_gap, 0.0);
        let mean = acc / n_trials as f64;
        assert!((mean - 1.0).abs() < 0.05, "zero-denoiser loss {mean}");
    }
}
