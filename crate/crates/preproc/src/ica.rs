//! FastICA with tanh contrast and symmetric decorrelation, plus removal of
//! components correlated with the ECG reference.

use numcore::linalg::eigh_symmetric;
use numcore::rng::RngStream;

use crate::{PreprocError, Result};

pub const ICA_TOL: f64 = 1e-4;
pub const ICA_MAX_ITER: usize = 200;

pub struct IcaOutcome {
    /// channels × samples after removing ECG-correlated components.
    pub cleaned: Vec<Vec<f64>>,
    /// sources × samples, estimated independent components.
    pub sources: Vec<Vec<f64>>,
    /// Indices of zeroed components.
    pub removed: Vec<usize>,
    /// Per-component |correlation| with the ECG reference.
    pub ecg_correlation: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Whitens, runs symmetric FastICA (g = tanh, fixed seed), zeroes components
/// whose |corr| with `ecg` exceeds `corr_threshold`, and subtracts their
/// projection from the data. Non-convergence returns the best iterate with
/// `converged = false`.
pub fn fastica_cleanup(
    eeg: &[Vec<f64>],
    ecg: &[f64],
    n_components: usize,
    corr_threshold: f64,
    seed: u64,
) -> Result<IcaOutcome> {
    let c = eeg.len();
    let n = eeg.first().map(|r| r.len()).unwrap_or(0);
    if n_components == 0 || n_components > c {
        return Err(PreprocError::Config(format!(
            "n_components {n_components} out of range for {c} channels"
        )));
    }
    if n < 10 * n_components {
        return Err(PreprocError::Config(format!(
            "need at least {} samples for {} components, got {}",
            10 * n_components,
            n_components,
            n
        )));
    }
    if ecg.len() != n {
        return Err(PreprocError::Config("ECG length differs from EEG".into()));
    }

    // center
    let means: Vec<f64> = eeg.iter().map(|row| row.iter().sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = eeg
        .iter()
        .zip(&means)
        .map(|(row, &m)| row.iter().map(|&x| x - m).collect())
        .collect();

    // covariance and whitening from its top eigenpairs
    let mut cov = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let mut acc = 0.0;
            for s in 0..n {
                acc += centered[i][s] * centered[j][s];
            }
            let v = acc / n as f64;
            cov[i * c + j] = v;
            cov[j * c + i] = v;
        }
    }
    let (eigvals, eigvecs) = eigh_symmetric(&cov, c);
    let k = n_components;
    // whitener rows: λ^{-1/2} eᵀ ; color rows used for back-projection: λ^{1/2} e
    let mut whiten = vec![0.0; k * c];
    let mut color = vec![0.0; c * k];
    for r in 0..k {
        let lam = eigvals[r].max(1e-12);
        let scale = 1.0 / lam.sqrt();
        for j in 0..c {
            whiten[r * c + j] = eigvecs[r * c + j] * scale;
            color[j * k + r] = eigvecs[r * c + j] * lam.sqrt();
        }
    }

    // z = whiten · x  (k × n)
    let mut z = vec![vec![0.0; n]; k];
    for r in 0..k {
        for j in 0..c {
            let w = whiten[r * c + j];
            if w == 0.0 {
                continue;
            }
            let src = &centered[j];
            let dst = &mut z[r];
            for s in 0..n {
                dst[s] += w * src[s];
            }
        }
    }

    // symmetric FastICA on the whitened data
    let mut rng = RngStream::new(seed, 0x1CA);
    let mut w: Vec<f64> = (0..k * k).map(|_| rng.normal_f64()).collect();
    symmetric_decorrelate(&mut w, k);

    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..ICA_MAX_ITER {
        iterations = iter + 1;
        let mut w_new = vec![0.0; k * k];
        for r in 0..k {
            // y = wᵣᵀ z ; wᵣ⁺ = E[z·tanh(y)] − E[1−tanh²(y)]·wᵣ
            let mut g_mean = 0.0;
            let mut acc = vec![0.0; k];
            for s in 0..n {
                let mut y = 0.0;
                for j in 0..k {
                    y += w[r * k + j] * z[j][s];
                }
                let t = y.tanh();
                g_mean += 1.0 - t * t;
                for j in 0..k {
                    acc[j] += z[j][s] * t;
                }
            }
            g_mean /= n as f64;
            for j in 0..k {
                w_new[r * k + j] = acc[j] / n as f64 - g_mean * w[r * k + j];
            }
        }
        symmetric_decorrelate(&mut w_new, k);

        // convergence: every direction stable up to sign
        let mut delta: f64 = 0.0;
        for r in 0..k {
            let mut dot = 0.0;
            for j in 0..k {
                dot += w_new[r * k + j] * w[r * k + j];
            }
            delta = delta.max((dot.abs() - 1.0).abs());
        }
        w = w_new;
        if delta < ICA_TOL {
            converged = true;
            break;
        }
    }

    // sources = w · z (k × n)
    let mut sources = vec![vec![0.0; n]; k];
    for r in 0..k {
        for j in 0..k {
            let wj = w[r * k + j];
            if wj == 0.0 {
                continue;
            }
            let zj = &z[j];
            let dst = &mut sources[r];
            for s in 0..n {
                dst[s] += wj * zj[s];
            }
        }
    }

    // correlation of each source with the ECG reference
    let ecg_correlation: Vec<f64> = sources
        .iter()
        .map(|s| synthdata::probe::correlation(s, ecg).abs())
        .collect();
    let removed: Vec<usize> = ecg_correlation
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > corr_threshold)
        .map(|(i, _)| i)
        .collect();

    // Removal subtracts each zeroed component's projection from the data,
    // x_clean = x − Σ_removed mix_r · s_r, leaving the out-of-model residual
    // untouched; with nothing removed the data passes through exactly.
    // mix = color (c×k) · wᵀ (k×k) -> c×k
    let mut mix = vec![0.0; c * k];
    for i in 0..c {
        for r in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += color[i * k + j] * w[r * k + j];
            }
            mix[i * k + r] = acc;
        }
    }
    let mut cleaned: Vec<Vec<f64>> = eeg.to_vec();
    for i in 0..c {
        let dst = &mut cleaned[i];
        for &r in &removed {
            let m = mix[i * k + r];
            if m == 0.0 {
                continue;
            }
            let src = &sources[r];
            for s in 0..n {
                dst[s] -= m * src[s];
            }
        }
    }

    Ok(IcaOutcome {
        cleaned,
        sources,
        removed,
        ecg_correlation,
        converged,
        iterations,
    })
}

/// W ← (W Wᵀ)^{−1/2} W, the symmetric decorrelation step.
fn symmetric_decorrelate(w: &mut [f64], k: usize) {
    let mut wwt = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += w[i * k + l] * w[j * k + l];
            }
            wwt[i * k + j] = acc;
            wwt[j * k + i] = acc;
        }
    }
    let (vals, vecs) = eigh_symmetric(&wwt, k);
    // (WWᵀ)^{-1/2} = E diag(λ^{-1/2}) Eᵀ
    let mut inv_sqrt = vec![0.0; k * k];
    for r in 0..k {
        let lam = vals[r].max(1e-12);
        let s = 1.0 / lam.sqrt();
        for i in 0..k {
            for j in 0..k {
                inv_sqrt[i * k + j] += vecs[r * k + i] * s * vecs[r * k + j];
            }
        }
    }
    let old = w.to_vec();
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += inv_sqrt[i * k + l] * old[l * k + j];
            }
            w[i * k + j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use synthdata::probe::correlation;

    /// Three classic non-Gaussian sources mixed into many channels.
    fn planted_mixture(channels: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = RngStream::new(seed, 0);
        let sources: Vec<Vec<f64>> = vec![
            // square wave
            (0..n).map(|i| if (i / 50) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            // sawtooth
            (0..n).map(|i| ((i % 80) as f64 / 80.0) * 2.0 - 1.0).collect(),
            // Laplacian-ish noise
            (0..n)
                .map(|_| {
                    let u: f64 = rng.uniform_f64() - 0.5;
                    -u.signum() * (1.0 - 2.0 * u.abs()).max(1e-12).ln() / 2.0
                })
                .collect(),
        ];
        let mut mixed = vec![vec![0.0; n]; channels];
        for ch in mixed.iter_mut() {
            let gains: Vec<f64> = (0..3).map(|_| rng.normal_f64()).collect();
            for (g, s) in gains.iter().zip(&sources) {
                for i in 0..n {
                    ch[i] += g * s[i];
                }
            }
            // tiny sensor noise keeps the covariance full rank
            for v in ch.iter_mut() {
                *v += 1e-4 * rng.normal_f64();
            }
        }
        (sources, mixed)
    }

    #[test]
    fn recovers_planted_sources() {
        let n = 4000;
        let (sources, mixed) = planted_mixture(64, n, 42);
        let ecg = vec![0.0; n];
        let out = fastica_cleanup(&mixed, &ecg, 3, 0.8, 7).unwrap();
        assert!(out.converged, "did not converge in {} iters", out.iterations);
        // every planted source matches some component up to sign
        for (si, s) in sources.iter().enumerate() {
            let best = out
                .sources
                .iter()
                .map(|comp| correlation(comp, s).abs())
                .fold(0.0f64, f64::max);
            assert!(best >= 0.95, "source {si} best |corr| {best:.3}");
        }
    }

    #[test]
    fn nothing_removed_when_ecg_uncorrelated() {
        let n = 4000;
        let (_, mixed) = planted_mixture(16, n, 11);
        let ecg = vec![0.0; n];
        let out = fastica_cleanup(&mixed, &ecg, 3, 0.8, 7).unwrap();
        assert!(out.removed.is_empty());
        // data is rank-3 + tiny noise, so 3 components reconstruct it
        let mut num = 0.0;
        let mut den = 0.0;
        for (orig, clean) in mixed.iter().zip(&out.cleaned) {
            for (o, c) in orig.iter().zip(clean.iter()) {
                num += (o - c) * (o - c);
                den += o * o;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-3, "reconstruction error {rel}");
    }

    #[test]
    fn planted_ecg_component_removed() {
        let n = 4000;
        let (_, mut mixed) = planted_mixture(16, n, 13);
        // plant an ECG-coupled component into every channel
        let mut rng = RngStream::new(99, 0);
        let ecg: Vec<f64> = (0..n)
            .map(|i| {
                let phase = (i % 400) as f64 / 400.0;
                if phase < 0.05 { (1.0 - phase / 0.05) * 2.0 } else { -0.1 }
            })
            .collect();
        for ch in mixed.iter_mut() {
            let g = 1.5 + rng.uniform_f64();
            for i in 0..n {
                ch[i] += g * ecg[i];
            }
        }
        let out = fastica_cleanup(&mixed, &ecg, 4, 0.8, 7).unwrap();
        assert_eq!(out.removed.len(), 1, "corrs {:?}", out.ecg_correlation);
        // residual ECG correlation of the cleaned data is low
        for ch in &out.cleaned {
            let r = correlation(ch, &ecg).abs();
            assert!(r < 0.1, "residual corr {r}");
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let eeg = vec![vec![0.0; 50]; 8];
        let ecg = vec![0.0; 50];
        assert!(fastica_cleanup(&eeg, &ecg, 8, 0.8, 1).is_err());
    }
}
