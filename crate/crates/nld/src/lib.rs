//! Neuro latent decoder: an orthonormal patch codec into latent space, a
//! DDPM noise schedule, a DiT-lite denoiser conditioned on the fused brain
//! representation by token concatenation, LoRA adapters on every attention
//! and feed-forward projection, two-phase training, and DDIM/ancestral
//! sampling back to pixels.

pub mod codec;
pub mod diffusion;
pub mod dit;
pub mod lora;
pub mod sample;
pub mod schedule;

pub use codec::LatentCodec;
pub use diffusion::{
    sample_timesteps, train_decoder, DecoderTrainConfig, DecoderTrainOutcome, StepRecord,
};
pub use dit::{DitConfig, DitModel, Phase};
pub use lora::{init_lora_linear, lora_linear, merged_weight, set_lora_only, LoraConfig};
pub use sample::{encode_training_latent, reconstruct_video, sample_latent, SampleOutcome, Sampler};
pub use schedule::{forward_diffuse, make_schedule, NoiseSchedule};

#[derive(Debug, thiserror::Error)]
pub enum NldError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error(transparent)]
    Mfe(#[from] mfe::MfeError),
    #[error(transparent)]
    Graph(#[from] numcore::Error),
    #[error(transparent)]
    Data(#[from] synthdata::Error),
}

pub type Result<T> = std::result::Result<T, NldError>;
