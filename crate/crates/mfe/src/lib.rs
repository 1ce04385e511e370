//! Multi-modal fusion encoder: modality tokenizers, transformer stacks in
//! five fusion arrangements, frozen stub semantic encoders, the temporal
//! aggregation module, the five-term contrastive objective, and training.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod loss;
pub mod params;
pub mod semantic;
pub mod tokenizer;
pub mod train;
pub mod transformer;

pub use encoder::{
    budget_target, EncodeOut, EncoderConfig, EncoderModel, FusionVariant, ModalityMode, StackPlan,
};
pub use loss::{clip_loss, total_contrastive_loss, LossFlags, LossTerm};
pub use params::{Bound, ParamStore};
pub use semantic::{aggregate_video, frame_features, init_stubs, text_embed, visual_embed};
pub use tokenizer::{chunk_layout, Modality, TokenizerSpec};
pub use train::{compute_zb, embed_split, nway_top1, retrieval_stats, train_encoder,
    EmbeddedSplit, EncoderTrainConfig, EpochRecord, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum MfeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] numcore::Error),
    #[error(transparent)]
    Data(#[from] synthdata::Error),
}

impl From<synthdata::CbtfError> for MfeError {
    fn from(e: synthdata::CbtfError) -> Self {
        MfeError::Data(e.into())
    }
}

impl From<synthdata::ManifestError> for MfeError {
    fn from(e: synthdata::ManifestError) -> Self {
        MfeError::Data(e.into())
    }
}

pub type Result<T> = std::result::Result<T, MfeError>;
