//! Generation configuration and the named presets used by the CLI.

use serde::{Deserialize, Serialize};

/// Everything the generator needs; dataset content is a pure function of
/// this struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_episodes: usize,
    pub clips_per_episode: usize,
    /// Voxels per fMRI frame.
    pub voxels: usize,
    pub eeg_channels: usize,
    /// EEG samples per 4-second clip (= clip_seconds * eeg_rate_hz).
    pub eeg_samples: usize,
    pub eeg_rate_hz: f64,
    pub frames_per_clip: usize,
    /// Square stimulus frames, frame_size × frame_size × 3.
    pub frame_size: usize,
    pub snr_db: f64,
    pub powerline_amp: f64,
    pub ecg_coupling: f64,
    pub seed: u64,
    /// Dimensionality of the appearance factor driving fMRI.
    pub spatial_dim: usize,
    /// Dimensionality of the motion factor driving EEG.
    pub temporal_dim: usize,
    pub n_classes: usize,
    /// 0 = continuous factors; k > 0 draws each clip's spatial factor from a
    /// codebook of k prototypes plus jitter (plants retrieval collisions that
    /// only the other modality can resolve).
    pub spatial_prototypes: usize,
    pub temporal_prototypes: usize,
    pub prototype_jitter: f64,
}

/// Fixed acquisition constants shared with preprocessing.
pub const TR_SECONDS: f64 = 0.8;
pub const FMRI_RATE_HZ: f64 = 1.25;
pub const CLIP_SECONDS: f64 = 4.0;
/// fMRI frames per clip (CLIP_SECONDS / TR_SECONDS).
pub const FRAMES_PER_CLIP_FMRI: usize = 5;

impl SynthConfig {
    /// Desk-scale preset: minutes-scale CPU training while preserving every
    /// shape relationship (5 fMRI frames per clip, 64 EEG channels).
    pub fn desk(seed: u64) -> Self {
        Self {
            n_episodes: 20,
            clips_per_episode: 32,
            voxels: 256,
            eeg_channels: 64,
            eeg_samples: 512,
            eeg_rate_hz: 128.0,
            frames_per_clip: 8,
            frame_size: 32,
            snr_db: 20.0,
            powerline_amp: 0.5,
            ecg_coupling: 0.5,
            seed,
            spatial_dim: 8,
            temporal_dim: 8,
            n_classes: 64,
            spatial_prototypes: 0,
            temporal_prototypes: 0,
            prototype_jitter: 0.05,
        }
    }

    /// Desk preset with planted complementary structure: appearance comes
    /// from a small prototype codebook (so fMRI alone collides), motion from
    /// another (so EEG alone collides).
    pub fn complementary(seed: u64) -> Self {
        Self {
            spatial_prototypes: 8,
            temporal_prototypes: 8,
            ..Self::desk(seed)
        }
    }

    /// Full-scale dimensions (5×8405 fMRI, 64×4000 EEG, 33 stimulus frames
    /// per clip, 270 clips per 18-minute run, 20 runs split 18/2). Used for
    /// shape verification, not for training.
    pub fn fullscale(seed: u64) -> Self {
        Self {
            n_episodes: 20,
            clips_per_episode: 270,
            voxels: 8405,
            eeg_channels: 64,
            eeg_samples: 4000,
            eeg_rate_hz: 1000.0,
            frames_per_clip: 33,
            frame_size: 32,
            snr_db: 20.0,
            powerline_amp: 0.5,
            ecg_coupling: 0.5,
            seed,
            spatial_dim: 8,
            temporal_dim: 8,
            n_classes: 64,
            spatial_prototypes: 0,
            temporal_prototypes: 0,
            prototype_jitter: 0.05,
        }
    }

    /// fMRI frames in one run (five per clip; scanning stops with the video).
    pub fn fmri_frames_per_run(&self) -> usize {
        self.clips_per_episode * FRAMES_PER_CLIP_FMRI
    }

    /// EEG samples in one run.
    pub fn eeg_samples_per_run(&self) -> usize {
        self.clips_per_episode * self.eeg_samples
    }

    /// TR onset sample indices on the EEG clock.
    pub fn tr_event_grid(&self) -> Vec<usize> {
        let per_tr = TR_SECONDS * self.eeg_rate_hz;
        (0..self.fmri_frames_per_run())
            .map(|i| (per_tr * i as f64).round() as usize)
            .collect()
    }

    pub fn total_clips(&self) -> usize {
        self.n_episodes * self.clips_per_episode
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n_episodes", self.n_episodes),
            ("clips_per_episode", self.clips_per_episode),
            ("voxels", self.voxels),
            ("eeg_channels", self.eeg_channels),
            ("eeg_samples", self.eeg_samples),
            ("frames_per_clip", self.frames_per_clip),
            ("frame_size", self.frame_size),
            ("spatial_dim", self.spatial_dim),
            ("temporal_dim", self.temporal_dim),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        let expected = (CLIP_SECONDS * self.eeg_rate_hz).round() as usize;
        if self.eeg_samples != expected {
            return Err(format!(
                "eeg_samples {} inconsistent with eeg_rate_hz {} (want {})",
                self.eeg_samples, self.eeg_rate_hz, expected
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fullscale_matches_acquisition_constants() {
        let c = SynthConfig::fullscale(0);
        assert_eq!(c.voxels, 8405);
        assert_eq!(c.eeg_samples, 4000);
        assert_eq!(c.frames_per_clip, 33);
        assert_eq!(c.fmri_frames_per_run(), 1350);
        assert_eq!(c.total_clips(), 5400);
        let grid = c.tr_event_grid();
        assert_eq!(grid.len(), 1350);
        assert_eq!(grid[1] - grid[0], 800);
    }

    #[test]
    fn desk_grid_spacing_within_one_sample() {
        let c = SynthConfig::desk(0);
        let grid = c.tr_event_grid();
        let nominal = TR_SECONDS * c.eeg_rate_hz;
        for w in grid.windows(2) {
            let spacing = (w[1] - w[0]) as f64;
            assert!((spacing - nominal).abs() <= 1.0);
        }
        // 5 TRs tile one clip window exactly at 128 Hz
        assert_eq!(grid[5], c.eeg_samples);
    }

    #[test]
    fn validate_catches_inconsistent_rate() {
        let mut c = SynthConfig::desk(0);
        c.eeg_samples = 500;
        assert!(c.validate().is_err());
    }
}
