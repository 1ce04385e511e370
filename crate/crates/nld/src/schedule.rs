//! DDPM noise schedule and the forward diffusion map.

use numcore::Tensor;

use crate::{NldError, Result};

/// β/ᾱ tables; index 0 corresponds to timestep t = 1.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear β ramp with ᾱ by cumulative product.
pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(NldError::Config("schedule needs at least one step".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(NldError::Config(format!(
            "invalid beta range {beta_start}..{beta_end}"
        )));
    }
    let mut betas = Vec::with_capacity(t_steps);
    let mut alpha_bars = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for i in 0..t_steps {
        let frac = if t_steps == 1 { 0.0 } else { i as f64 / (t_steps - 1) as f64 };
        let beta = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0 - beta;
        betas.push(beta);
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// ᾱ_t for a 1-based timestep.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.len() {
            return Err(NldError::Config(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(self.alpha_bars[t - 1])
    }

    /// The f32 coefficients (√ᾱ_t, √(1−ᾱ_t)) used by [`forward_diffuse`].
    pub fn diffusion_coefficients(&self, t: usize) -> Result<(f32, f32)> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt() as f32, (1.0 - ab).sqrt() as f32))
    }
}

/// `x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · ε`, elementwise in f32.
pub fn forward_diffuse(
    x0: &Tensor<f32>,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    if x0.shape() != eps.shape() {
        return Err(NldError::Config(format!(
            "x0 shape {:?} != eps shape {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let (sab, snab) = schedule.diffusion_coefficients(t)?;
    let data: Vec<f32> = x0
        .data()
        .iter()
        .zip(eps.data().iter())
        .map(|(&x, &e)| sab * x + snab * e)
        .collect();
    Tensor::from_vec(x0.shape(), data).map_err(|e| NldError::Numeric(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::RngStream;

    #[test]
    fn default_schedule_first_alpha_bar() {
        let s = make_schedule(1000, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        assert_eq!(s.len(), 1000);
        assert!((s.alpha_bar(1).unwrap() - 0.9999).abs() < 1e-12);
        assert!(s.alpha_bar(1).unwrap() > 0.99);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = make_schedule(1000, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        for w in s.alpha_bars.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.betas.iter().all(|&b| 0.0 < b && b < 1.0));
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 1e-4, 0.02).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.alpha_bar(1).unwrap() - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bar(2).is_err());
    }

    #[test]
    fn noiseless_limit_identity() {
        // a hypothetical ᾱ = 1 schedule entry returns x0 unchanged
        let s = NoiseSchedule {
            betas: vec![0.0],
            alpha_bars: vec![1.0],
        };
        let mut rng = RngStream::new(1, 0);
        let x0 = Tensor::from_fn(&[4, 3], |_| rng.normal_f64() as f32);
        let eps = Tensor::from_fn(&[4, 3], |_| rng.normal_f64() as f32);
        let xt = forward_diffuse(&x0, 1, &s, &eps).unwrap();
        assert_eq!(xt, x0);
    }

    #[test]
    fn monte_carlo_moments() {
        // mean → √ᾱ_t · x0, variance → (1−ᾱ_t) on fixed x0
        let s = make_schedule(1000, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let t = 600;
        let (sab, snab) = s.diffusion_coefficients(t).unwrap();
        let x0 = Tensor::from_vec(&[1], vec![0.8f32]).unwrap();
        let mut rng = RngStream::new(5, 0);
        let n = 10_000;
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for _ in 0..n {
            let eps = Tensor::from_vec(&[1], vec![rng.normal_f64() as f32]).unwrap();
            let xt = forward_diffuse(&x0, t, &s, &eps).unwrap().item() as f64;
            sum += xt;
            sq += xt * xt;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let expect_mean = sab as f64 * 0.8;
        let expect_var = (snab as f64) * (snab as f64);
        // 3σ Monte Carlo bounds
        let se_mean = (expect_var / n as f64).sqrt();
        assert!((mean - expect_mean).abs() < 3.0 * se_mean, "mean {mean} vs {expect_mean}");
        assert!((var - expect_var).abs() / expect_var < 0.05, "var {var} vs {expect_var}");
    }
}
