//! Library surface behind the `b2v` binary: experiment configuration, the
//! pipeline stages, the comparison harnesses, and the control experiment
//! used to measure the value of brain conditioning.

pub mod ablate;
pub mod config;
pub mod runlog;
pub mod stages;

pub use ablate::{ablate_alignment, ablate_fusion, modality_compare, ComparisonTable, TableRow};
pub use config::ExperimentConfig;
pub use runlog::RunLog;
pub use stages::{
    run_pipeline, stage_evaluate, stage_preprocess, stage_reconstruct, stage_synth,
    stage_train_decoder, stage_train_encoder,
};

/// Errors carry their exit-code category: configuration (2), data (3),
/// numeric (4).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<synthdata::Error> for CliError {
    fn from(e: synthdata::Error) -> Self {
        match e {
            synthdata::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<synthdata::CbtfError> for CliError {
    fn from(e: synthdata::CbtfError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<synthdata::ManifestError> for CliError {
    fn from(e: synthdata::ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<preproc::PreprocError> for CliError {
    fn from(e: preproc::PreprocError) -> Self {
        match e {
            preproc::PreprocError::Config(msg) => CliError::Config(msg),
            preproc::PreprocError::Numeric(msg) => CliError::Numeric(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<mfe::MfeError> for CliError {
    fn from(e: mfe::MfeError) -> Self {
        match e {
            mfe::MfeError::Config(msg) | mfe::MfeError::Contract(msg) | mfe::MfeError::Param(msg) => {
                CliError::Config(msg)
            }
            mfe::MfeError::Numeric(msg) | mfe::MfeError::Diverged(msg) => CliError::Numeric(msg),
            mfe::MfeError::Graph(g) => CliError::Numeric(g.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<nld::NldError> for CliError {
    fn from(e: nld::NldError) -> Self {
        match e {
            nld::NldError::Config(msg) => CliError::Config(msg),
            nld::NldError::Numeric(msg) => CliError::Numeric(msg),
            nld::NldError::Graph(g) => CliError::Numeric(g.to_string()),
            nld::NldError::Mfe(m) => m.into(),
            nld::NldError::Data(d) => d.into(),
        }
    }
}

impl From<evalkit::EvalError> for CliError {
    fn from(e: evalkit::EvalError) -> Self {
        match e {
            evalkit::EvalError::Contract(msg) => CliError::Config(msg),
            evalkit::EvalError::Shape(msg) => CliError::Data(msg),
        }
    }
}
