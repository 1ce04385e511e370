//! fMRI-side preprocessing: lag-aware z-scoring and TR-synchronized
//! 4-second epoching of the paired recordings.

use numcore::Tensor;

use synthdata::config::{FMRI_RATE_HZ, FRAMES_PER_CLIP_FMRI};

use crate::{PreprocError, Result};

/// Z-scored run plus the lag bookkeeping.
pub struct ZscoredRun {
    /// frames × voxels, each voxel column standardized over the run.
    pub data: Tensor<f32>,
    /// Response delay in frames (stimulus clip k maps to frames
    /// `[5k + lag_frames, 5k + lag_frames + 5)`).
    pub lag_frames: usize,
    /// Voxels whose variance collapsed to (near) zero; their output is zero.
    pub flagged_voxels: Vec<usize>,
}

/// Standardizes every voxel column and records the lag-corrected alignment.
/// The lag is applied to the stimulus→response index map, not by shifting
/// data in memory.
pub fn zscore_with_lag(fmri: &Tensor<f32>, lag_seconds: f64) -> Result<ZscoredRun> {
    let shape = fmri.shape();
    if shape.len() != 2 {
        return Err(PreprocError::Config(format!(
            "fMRI run must be frames × voxels, got {shape:?}"
        )));
    }
    let (frames, voxels) = (shape[0], shape[1]);
    let lag_frames = (lag_seconds * FMRI_RATE_HZ).round() as usize;
    if frames <= lag_frames {
        return Err(PreprocError::Config(format!(
            "run of {frames} frames shorter than the {lag_frames}-frame lag"
        )));
    }

    const EPS: f64 = 1e-12;
    let src = fmri.data();
    let mut out = vec![0.0f32; frames * voxels];
    let mut flagged = Vec::new();
    for v in 0..voxels {
        let mut mean = 0.0f64;
        for f in 0..frames {
            mean += src[f * voxels + v] as f64;
        }
        mean /= frames as f64;
        let mut var = 0.0f64;
        for f in 0..frames {
            let d = src[f * voxels + v] as f64 - mean;
            var += d * d;
        }
        var /= frames as f64;
        let std = var.sqrt();
        if std < 1e-6 {
            flagged.push(v);
            // std clamped to eps leaves (x − μ)/eps ≈ 0 for a constant voxel
            for f in 0..frames {
                out[f * voxels + v] = ((src[f * voxels + v] as f64 - mean) / EPS.max(std)) as f32;
            }
        } else {
            for f in 0..frames {
                out[f * voxels + v] = ((src[f * voxels + v] as f64 - mean) / std) as f32;
            }
        }
    }
    Ok(ZscoredRun {
        data: Tensor::from_vec(&[frames, voxels], out)
            .map_err(|e| PreprocError::Numeric(e.to_string()))?,
        lag_frames,
        flagged_voxels: flagged,
    })
}

/// One aligned 4-second sample.
#[derive(Clone)]
pub struct EpochedSample {
    /// 5 × voxels lag-shifted response window.
    pub fmri: Tensor<f32>,
    /// channels × clip samples.
    pub eeg: Tensor<f32>,
    pub clip_index: usize,
    pub episode_id: usize,
    pub stimulus_ref: String,
}

pub struct EpochOutcome {
    pub samples: Vec<EpochedSample>,
    /// Trailing clips dropped because the lagged window exceeded a recording.
    pub dropped: usize,
}

/// Cuts consecutive non-overlapping 4 s windows. fMRI windows are lag
/// shifted; EEG windows start on the TR event grid. Clips whose windows
/// exceed either recording are dropped and counted, never padded.
pub fn epoch_align(
    fmri_z: &ZscoredRun,
    eeg: &[Vec<f64>],
    tr_events: &[usize],
    clip_samples: usize,
    episode_id: usize,
) -> Result<EpochOutcome> {
    let frames = fmri_z.data.shape()[0];
    let voxels = fmri_z.data.shape()[1];
    let n_clips = frames / FRAMES_PER_CLIP_FMRI;
    if n_clips == 0 {
        return Ok(EpochOutcome {
            samples: Vec::new(),
            dropped: 0,
        });
    }
    let mismatch = (tr_events.len() as isize - frames as isize).abs();
    if mismatch > 1 {
        return Err(PreprocError::Sync(format!(
            "{} TR events for {} fMRI frames",
            tr_events.len(),
            frames
        )));
    }
    let channels = eeg.len();
    let eeg_len = eeg.first().map(|c| c.len()).unwrap_or(0);

    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for k in 0..n_clips {
        let f_start = k * FRAMES_PER_CLIP_FMRI + fmri_z.lag_frames;
        let f_end = f_start + FRAMES_PER_CLIP_FMRI;
        let e_start = tr_events[k * FRAMES_PER_CLIP_FMRI];
        let e_end = e_start + clip_samples;
        if f_end > frames || e_end > eeg_len {
            dropped += 1;
            continue;
        }
        let fmri_win = fmri_z
            .data
            .rows(f_start, FRAMES_PER_CLIP_FMRI)
            .map_err(|e| PreprocError::Numeric(e.to_string()))?;
        let mut eeg_win = vec![0.0f32; channels * clip_samples];
        for (c, chan) in eeg.iter().enumerate() {
            for s in 0..clip_samples {
                eeg_win[c * clip_samples + s] = chan[e_start + s] as f32;
            }
        }
        samples.push(EpochedSample {
            fmri: fmri_win.reshape(&[FRAMES_PER_CLIP_FMRI, voxels]).unwrap(),
            eeg: Tensor::from_vec(&[channels, clip_samples], eeg_win)
                .map_err(|e| PreprocError::Numeric(e.to_string()))?,
            clip_index: k,
            episode_id,
            stimulus_ref: format!("episode_{episode_id:03}/clip_{k:04}"),
        });
    }
    Ok(EpochOutcome { samples, dropped })
}
