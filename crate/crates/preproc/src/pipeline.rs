//! The per-run preprocessing chain and the dataset-level driver that
//! reads/writes the synthdata formats.
//!
//! Chain per run: band-pass (0.1–30 Hz) → 50 Hz notch → QRS template
//! subtraction → FastICA cleanup of ECG-correlated components, then lagged
//! z-scoring of the fMRI run and TR-synchronized epoching.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use numcore::Tensor;
use synthdata::cbtf;
use synthdata::config::SynthConfig;
use synthdata::generate::cbtf_offset;
use synthdata::manifest::{DatasetManifest, FileRef, PreprocProvenance};

use crate::fmri::{epoch_align, zscore_with_lag, EpochedSample};
use crate::ica::fastica_cleanup;
use crate::qrs::remove_cardiac_artifact;
use crate::{FilterCascade, PreprocError, Result};

/// Tunables for the chain; defaults follow the recording constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub lag_seconds: f64,
    pub ica_components: usize,
    pub ica_corr_threshold: f64,
    pub ica_seed: u64,
    /// Skip the ICA stage (it dominates runtime on long runs).
    pub skip_ica: bool,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            bandpass_low_hz: 0.1,
            bandpass_high_hz: 30.0,
            notch_hz: 50.0,
            notch_q: 30.0,
            lag_seconds: 4.0,
            ica_components: 20,
            ica_corr_threshold: 0.8,
            ica_seed: 0x5eed,
            skip_ica: false,
        }
    }
}

/// Structured per-run log entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub episode: usize,
    pub clips_epoched: usize,
    pub clips_dropped: usize,
    pub flagged_voxels: usize,
    pub qrs_beats_detected: usize,
    pub qrs_applied: bool,
    pub ica_removed_components: Vec<usize>,
    pub ica_converged: bool,
    pub ica_iterations: usize,
    pub warnings: Vec<String>,
}

pub struct ProcessedRun {
    pub samples: Vec<EpochedSample>,
    pub log: RunLog,
}

/// Runs the full chain on in-memory run data.
pub fn process_run(
    cfg: &PreprocConfig,
    episode: usize,
    fmri: &Tensor<f32>,
    eeg: &Tensor<f32>,
    ecg: &Tensor<f32>,
    tr_events: &[usize],
    eeg_rate_hz: f64,
    clip_samples: usize,
) -> Result<ProcessedRun> {
    let channels = eeg.shape()[0];
    let n = eeg.shape()[1];
    let mut warnings = Vec::new();

    // EEG filters, per channel in parallel
    let bandpass = FilterCascade::butter_bandpass(cfg.bandpass_low_hz, cfg.bandpass_high_hz, eeg_rate_hz)?;
    let notch = FilterCascade::notch(cfg.notch_hz, eeg_rate_hz, cfg.notch_q)?;
    let filtered: Vec<Vec<f64>> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let row: Vec<f64> = eeg.data()[c * n..(c + 1) * n].iter().map(|&x| x as f64).collect();
            let row = bandpass.filtfilt(&row)?;
            notch.filtfilt(&row)
        })
        .collect::<Result<Vec<_>>>()?;

    // cardiac template subtraction
    let ecg_f64: Vec<f64> = ecg.data().iter().map(|&x| x as f64).collect();
    let qrs = remove_cardiac_artifact(&filtered, &ecg_f64, eeg_rate_hz)?;
    if !qrs.applied {
        warnings.push(format!(
            "QRS removal skipped: only {} beats detected",
            qrs.peaks.len()
        ));
    }

    // residual artifact isolation by ICA
    let (eeg_clean, removed, converged, iterations) = if cfg.skip_ica {
        (qrs.eeg, Vec::new(), true, 0)
    } else {
        let ica = fastica_cleanup(
            &qrs.eeg,
            &ecg_f64,
            cfg.ica_components.min(channels),
            cfg.ica_corr_threshold,
            cfg.ica_seed,
        )?;
        if !ica.converged {
            warnings.push(format!(
                "FastICA stopped at {} iterations without convergence",
                ica.iterations
            ));
        }
        (ica.cleaned, ica.removed, ica.converged, ica.iterations)
    };

    // fMRI z-scoring + joint epoching
    let z = zscore_with_lag(fmri, cfg.lag_seconds)?;
    let epochs = epoch_align(&z, &eeg_clean, tr_events, clip_samples, episode)?;

    let log = RunLog {
        episode,
        clips_epoched: epochs.samples.len(),
        clips_dropped: epochs.dropped,
        flagged_voxels: z.flagged_voxels.len(),
        qrs_beats_detected: qrs.peaks.len(),
        qrs_applied: qrs.applied,
        ica_removed_components: removed,
        ica_converged: converged,
        ica_iterations: iterations,
        warnings,
    };
    Ok(ProcessedRun {
        samples: epochs.samples,
        log,
    })
}

/// Preprocesses every run of an on-disk dataset: writes per-clip fMRI/EEG
/// tensors next to the stimulus clips, appends run logs under `logs/`, and
/// updates the manifest with provenance.
pub fn preprocess_dataset(root: &Path, cfg: &PreprocConfig) -> Result<Vec<RunLog>> {
    let mut manifest = DatasetManifest::load(root)?;
    let synth: SynthConfig = manifest.config.clone();
    let clip_samples = synth.eeg_samples;

    let mut logs = Vec::new();
    let mut dropped_total = 0usize;
    let mut flagged_total = 0usize;
    let mut removed_total = 0usize;

    for run in &manifest.runs {
        let episode = run.episode;
        let fmri = cbtf::read_f32(&root.join(&run.fmri.path))?;
        let eeg = cbtf::read_f32(&root.join(&run.eeg.path))?;
        let ecg = cbtf::read_f32(&root.join(&run.ecg.path))?;
        let processed = process_run(
            cfg,
            episode,
            &fmri,
            &eeg,
            &ecg,
            &run.tr_events,
            synth.eeg_rate_hz,
            clip_samples,
        )?;

        for sample in &processed.samples {
            let clip_index = episode * synth.clips_per_episode + sample.clip_index;
            let dir = format!("dataset/episode_{episode:03}");
            let fmri_rel = format!("{dir}/clip_{clip_index:04}.fmri.cbtf");
            let eeg_rel = format!("{dir}/clip_{clip_index:04}.eeg.cbtf");
            cbtf::write_f32(&sample.fmri, &root.join(&fmri_rel))?;
            cbtf::write_f32(&sample.eeg, &root.join(&eeg_rel))?;
            let record = manifest
                .clips
                .iter_mut()
                .find(|c| c.clip_index == clip_index)
                .ok_or_else(|| PreprocError::Sync(format!("clip {clip_index} missing from manifest")))?;
            record.fmri = Some(FileRef::describe(root, &fmri_rel, sample.fmri.shape(), cbtf_offset(2))?);
            record.eeg = Some(FileRef::describe(root, &eeg_rel, sample.eeg.shape(), cbtf_offset(2))?);
        }

        let log_path = root.join(format!("logs/preproc_run_{episode:03}.json"));
        if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PreprocError::Io {
                path: log_path.display().to_string(),
                source: e,
            })?;
        }
        std::fs::write(
            &log_path,
            serde_json::to_string_pretty(&processed.log).expect("log serializes"),
        )
        .map_err(|e| PreprocError::Io {
            path: log_path.display().to_string(),
            source: e,
        })?;

        dropped_total += processed.log.clips_dropped;
        flagged_total += processed.log.flagged_voxels;
        removed_total += processed.log.ica_removed_components.len();
        logs.push(processed.log);
    }

    manifest.preprocessing = Some(PreprocProvenance {
        lag_frames: (cfg.lag_seconds * synthdata::config::FMRI_RATE_HZ).round() as usize,
        dropped_clips: dropped_total,
        flagged_voxels: flagged_total,
        removed_components: removed_total,
        config_hash: synthdata::manifest::config_hash(cfg),
    });
    manifest.save(root)?;
    Ok(logs)
}
