//! Deterministic synthetic paired datasets and the on-disk formats shared
//! across the pipeline.
//!
//! * [`cbtf`] — the binary tensor container (`CBTF` magic, bit-exact layout),
//! * [`manifest`] — dataset manifest with splits, shapes and checksums,
//! * [`config`] — generation presets (`desk`, `complementary`, `fullscale`),
//! * [`generate`] — the generator itself (videos, fMRI-like and EEG-like
//!   runs with planted structure and artifacts),
//! * [`probe`] — ridge probes verifying the planted complementarity.
//!
//! Dataset layout on disk:
//!
//! ```text
//! <root>/manifest.json
//! <root>/mixing_af.cbtf                  voxels × spatial_dim
//! <root>/mixing_be.cbtf                  channels × temporal_dim
//! <root>/runs/run_000.{fmri,eeg,ecg}.cbtf
//! <root>/dataset/episode_000/clip_0000.video.cbtf
//! <root>/dataset/episode_000/clip_0000.{fmri,eeg}.cbtf   (after preprocessing)
//! ```

pub mod cbtf;
pub mod config;
pub mod generate;
pub mod manifest;
pub mod probe;

pub use cbtf::{read_f32, read_f64, write_f32, write_f64, CbtfError};
pub use config::SynthConfig;
pub use generate::{
    clip_latents, generate_dataset, mixing_matrices, render_clip_video, synth_run, RunData,
    StimulusLatent,
};
pub use manifest::{config_hash, ClipRecord, DatasetManifest, FileRef, ManifestError, Split};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cbtf(#[from] CbtfError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

pub type Result<T> = std::result::Result<T, Error>;
