//! Evaluation metrics over reconstructed/ground-truth clip pairs: retrieval
//! accuracy (N-way top-K), a Fréchet-distance surrogate over toy embeddings,
//! temporal consistency, SSIM and PSNR, assembled into a serializable
//! report.

pub mod embed;
pub mod metrics;
pub mod report;

pub use embed::{clip_embedding, FrameEmbedder, ToyVisualEmbedder};
pub use metrics::{
    frechet_distance, nway_topk, psnr, ssim, temporal_consistency, PSNR_CAP_DB,
};
pub use report::{assemble_report, AggregateMetrics, ClipMetrics, ClipPair, MetricReport, ReportInputs};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
