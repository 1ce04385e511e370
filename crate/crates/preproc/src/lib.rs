//! Preprocessing for simultaneous EEG–fMRI recordings: zero-phase band-pass
//! and notch filtering, QRS-locked cardiac-artifact subtraction, FastICA
//! cleanup of residual ECG-correlated components, lag-aware z-scoring of the
//! BOLD signal, and TR-synchronized 4-second epoching.

pub mod filter;
pub mod fmri;
pub mod ica;
pub mod pipeline;
pub mod qrs;

pub use filter::{rms, tone_amplitude, FilterCascade};
pub use fmri::{epoch_align, zscore_with_lag, EpochOutcome, EpochedSample, ZscoredRun};
pub use ica::{fastica_cleanup, IcaOutcome};
pub use pipeline::{preprocess_dataset, process_run, PreprocConfig, ProcessedRun, RunLog};
pub use qrs::{detect_r_peaks, remove_cardiac_artifact, QrsCleanup};

#[derive(Debug, thiserror::Error)]
pub enum PreprocError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("synchronization: {0}")]
    Sync(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] synthdata::Error),
}

impl From<synthdata::CbtfError> for PreprocError {
    fn from(e: synthdata::CbtfError) -> Self {
        PreprocError::Data(e.into())
    }
}

impl From<synthdata::ManifestError> for PreprocError {
    fn from(e: synthdata::ManifestError) -> Self {
        PreprocError::Data(e.into())
    }
}

pub type Result<T> = std::result::Result<T, PreprocError>;
