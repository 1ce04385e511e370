//! Ridge-regression probes for the planted complementarity contract: a
//! linear readout of fMRI features must recover the appearance factor but
//! not the motion factor, and the mirror must hold for EEG.
//!
//! Probes fit on even-indexed clips and report held-out R² on odd-indexed
//! clips, so an uninformative feature set scores near zero rather than
//! overfitting its way up.

use numcore::linalg::solve_spd;

use crate::config::{SynthConfig, FRAMES_PER_CLIP_FMRI};
use crate::generate::{eeg_basis, lag_frames, RunData};

/// Held-out R² of a ridge readout from `features` (n×p) to `targets` (n×d),
/// averaged over target dimensions. Features are standardized on the
/// training half.
pub fn ridge_probe_r2(features: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> f64 {
    assert_eq!(features.len(), targets.len());
    let n = features.len();
    assert!(n >= 8, "probe needs a handful of samples");
    let p = features[0].len();
    let d = targets[0].len();

    let train: Vec<usize> = (0..n).step_by(2).collect();
    let test: Vec<usize> = (1..n).step_by(2).collect();

    // standardize features on the training half
    let mut mean = vec![0.0; p];
    for &i in &train {
        for j in 0..p {
            mean[j] += features[i][j];
        }
    }
    for m in mean.iter_mut() {
        *m /= train.len() as f64;
    }
    let mut std = vec![0.0; p];
    for &i in &train {
        for j in 0..p {
            let dlt = features[i][j] - mean[j];
            std[j] += dlt * dlt;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / train.len() as f64).sqrt().max(1e-9);
    }
    let xrow = |i: usize| -> Vec<f64> {
        (0..p).map(|j| (features[i][j] - mean[j]) / std[j]).collect()
    };

    // gram = XᵀX + λI, rhs per target dim
    let mut gram = vec![0.0; p * p];
    for &i in &train {
        let x = xrow(i);
        for a in 0..p {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            for b in a..p {
                gram[a * p + b] += xa * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
        gram[a * p + a] += lambda;
    }

    let mut r2_sum = 0.0;
    for dim in 0..d {
        let mut rhs = vec![0.0; p];
        let mut y_mean = 0.0;
        for &i in &train {
            y_mean += targets[i][dim];
        }
        y_mean /= train.len() as f64;
        for &i in &train {
            let x = xrow(i);
            let y = targets[i][dim] - y_mean;
            for a in 0..p {
                rhs[a] += x[a] * y;
            }
        }
        let beta = match solve_spd(&gram, p, &rhs) {
            Some(b) => b,
            None => return 0.0,
        };
        let mut sse = 0.0;
        let mut sst = 0.0;
        for &i in &test {
            let x = xrow(i);
            let pred: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>() + y_mean;
            let err = targets[i][dim] - pred;
            sse += err * err;
            let dev = targets[i][dim] - y_mean;
            sst += dev * dev;
        }
        if sst > 1e-12 {
            r2_sum += 1.0 - sse / sst;
        }
    }
    r2_sum / d as f64
}

/// Per-clip fMRI features: mean of the lag-mapped 5-frame response window,
/// one value per voxel. Clips whose window exceeds the run are skipped.
pub fn fmri_clip_features(cfg: &SynthConfig, run: &RunData) -> Vec<(usize, Vec<f64>)> {
    let frames = cfg.fmri_frames_per_run();
    let v = cfg.voxels;
    let lag = lag_frames(4.0);
    let mut out = Vec::new();
    for k in 0..cfg.clips_per_episode {
        let start = k * FRAMES_PER_CLIP_FMRI + lag;
        let end = start + FRAMES_PER_CLIP_FMRI;
        if end > frames {
            continue;
        }
        let mut feat = vec![0.0; v];
        for f in start..end {
            for vox in 0..v {
                feat[vox] += run.fmri.data()[f * v + vox] as f64;
            }
        }
        for x in feat.iter_mut() {
            *x /= FRAMES_PER_CLIP_FMRI as f64;
        }
        out.push((k, feat));
    }
    out
}

/// Per-clip EEG features: projection of each channel's clip window onto each
/// basis sinusoid (channels × basis matched filters).
pub fn eeg_clip_features(cfg: &SynthConfig, run: &RunData) -> Vec<(usize, Vec<f64>)> {
    let (freqs, phases) = eeg_basis(cfg);
    let n = cfg.eeg_samples_per_run();
    let c = cfg.eeg_channels;
    let w = cfg.eeg_samples;
    let fs = cfg.eeg_rate_hz;
    let mut out = Vec::new();
    for k in 0..cfg.clips_per_episode {
        let start = k * w;
        if start + w > n {
            continue;
        }
        let mut feat = vec![0.0; c * freqs.len()];
        for (j, (&fj, &pj)) in freqs.iter().zip(phases.iter()).enumerate() {
            // matched filter against the generator's basis
            let template: Vec<f64> = (0..w)
                .map(|s| {
                    let t = (start + s) as f64 / fs;
                    (std::f64::consts::TAU * fj * t + pj).sin()
                })
                .collect();
            let norm: f64 = template.iter().map(|x| x * x).sum();
            for ch in 0..c {
                let mut dot = 0.0;
                for s in 0..w {
                    dot += run.eeg.data()[ch * n + start + s] as f64 * template[s];
                }
                feat[ch * freqs.len() + j] = dot / norm;
            }
        }
        out.push((k, feat));
    }
    out
}

/// Cross-factor probe summary over a set of runs.
#[derive(Clone, Copy, Debug)]
pub struct ComplementarityReport {
    pub fmri_to_spatial_r2: f64,
    pub fmri_to_temporal_r2: f64,
    pub eeg_to_temporal_r2: f64,
    pub eeg_to_spatial_r2: f64,
}

pub fn complementarity_probe(cfg: &SynthConfig, runs: &[RunData], lambda: f64) -> ComplementarityReport {
    let mut fmri_feats = Vec::new();
    let mut eeg_feats = Vec::new();
    let mut spatial = Vec::new();
    let mut temporal = Vec::new();
    let mut spatial_eeg = Vec::new();
    let mut temporal_eeg = Vec::new();
    for run in runs {
        for (k, f) in fmri_clip_features(cfg, run) {
            fmri_feats.push(f);
            spatial.push(run.latents[k].spatial.clone());
            temporal.push(run.latents[k].temporal.clone());
        }
        for (k, f) in eeg_clip_features(cfg, run) {
            eeg_feats.push(f);
            spatial_eeg.push(run.latents[k].spatial.clone());
            temporal_eeg.push(run.latents[k].temporal.clone());
        }
    }
    ComplementarityReport {
        fmri_to_spatial_r2: ridge_probe_r2(&fmri_feats, &spatial, lambda),
        fmri_to_temporal_r2: ridge_probe_r2(&fmri_feats, &temporal, lambda),
        eeg_to_temporal_r2: ridge_probe_r2(&eeg_feats, &temporal_eeg, lambda),
        eeg_to_spatial_r2: ridge_probe_r2(&eeg_feats, &spatial_eeg, lambda),
    }
}

/// Shared helper for oracle checks: Pearson correlation of two slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}
