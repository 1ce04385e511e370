//! Experiment configuration: one JSON document drives every stage. Named
//! presets (`desk`, `fullscale-shapes`, `complementary`) provide complete
//! configurations; a config file or CLI flags override them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfe::{EncoderConfig, EncoderTrainConfig, FusionVariant, LossFlags, ModalityMode};
use nld::{DecoderTrainConfig, LoraConfig, Sampler};
use preproc::PreprocConfig;
use synthdata::SynthConfig;

use crate::{CliError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoderSection {
    /// Codec patch size (pixels).
    pub patch: usize,
    pub codec_seed: u64,
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub lora: LoraConfig,
    pub t_steps: usize,
    pub sampler: Sampler,
    pub sample_steps: usize,
    pub train: DecoderTrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSection {
    pub metric_seed: u64,
    /// Distractor trials per query.
    pub trials: usize,
    /// Cap on evaluated test clips (0 = all).
    pub max_clips: usize,
}

/// Reduced budgets for the ablation harnesses (many rows on one core).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationSection {
    pub encoder_epochs: usize,
    pub decoder_warmup_steps: usize,
    pub decoder_conditional_steps: usize,
    pub sample_steps: usize,
    pub eval_clips: usize,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    /// Base output directory; excluded from the config hash so runs in
    /// different locations reproduce identical artifacts.
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub preproc: PreprocConfig,
    pub encoder: EncoderConfig,
    pub encoder_train: EncoderTrainConfig,
    pub decoder: DecoderSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    pub fn preset(name: &str, seed: u64, out_dir: &Path) -> Result<Self> {
        let cfg = match name {
            "desk" => Self::desk(seed, out_dir),
            "complementary" => {
                let mut cfg = Self::desk(seed, out_dir);
                cfg.preset = "complementary".into();
                cfg.synth = SynthConfig::complementary(seed);
                cfg
            }
            "fullscale-shapes" => {
                let mut cfg = Self::desk(seed, out_dir);
                cfg.preset = "fullscale-shapes".into();
                cfg.synth = SynthConfig::fullscale(seed);
                cfg.train_episodes = 18;
                cfg.test_episodes = 2;
                cfg.encoder = EncoderConfig::fullscale();
                cfg
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown preset `{other}` (expected desk, complementary or fullscale-shapes)"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn desk(seed: u64, out_dir: &Path) -> Self {
        let synth = SynthConfig::desk(seed);
        let encoder = EncoderConfig::desk(&synth);
        Self {
            preset: "desk".into(),
            seed,
            out_dir: out_dir.to_path_buf(),
            train_episodes: 16,
            test_episodes: 4,
            preproc: PreprocConfig::default(),
            encoder,
            encoder_train: EncoderTrainConfig::default(),
            decoder: DecoderSection {
                patch: 16,
                codec_seed: 0x10DEC,
                layers: 4,
                width: 128,
                heads: 4,
                mlp_hidden: 256,
                lora: LoraConfig { rank: 4, alpha: 4.0 },
                t_steps: 1000,
                sampler: Sampler::Ddim,
                sample_steps: 50,
                train: DecoderTrainConfig::default(),
            },
            eval: EvalSection {
                metric_seed: 0xE7A1,
                trials: 100,
                max_clips: 0,
            },
            ablation: AblationSection {
                encoder_epochs: 8,
                decoder_warmup_steps: 60,
                decoder_conditional_steps: 150,
                sample_steps: 12,
                eval_clips: 16,
                trials: 25,
            },
            synth,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!(
            "{}: {e}",
            path.display()
        )))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config(format!(
            "{}: {e}",
            path.display()
        )))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth
            .validate()
            .map_err(|e| CliError::Config(format!("synth.{e}")))?;
        self.encoder
            .validate()
            .map_err(|e| CliError::Config(format!("encoder: {e}")))?;
        if self.train_episodes + self.test_episodes != self.synth.n_episodes {
            return Err(CliError::Config(format!(
                "train_episodes {} + test_episodes {} != synth.n_episodes {}",
                self.train_episodes, self.test_episodes, self.synth.n_episodes
            )));
        }
        if self.decoder.sample_steps == 0 || self.decoder.sample_steps > self.decoder.t_steps {
            return Err(CliError::Config(format!(
                "decoder.sample_steps {} outside 1..={}",
                self.decoder.sample_steps, self.decoder.t_steps
            )));
        }
        Ok(())
    }

    /// Hash over everything except the output location.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.out_dir = PathBuf::new();
        synthdata::config_hash(&hashed)
    }

    /// `out_dir/<hash>` — the root for every artifact of this config.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.hash())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.run_dir().join("dataset")
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir().join(stage)
    }

    /// Encoder config specialized for an ablation row.
    pub fn encoder_for(&self, variant: FusionVariant, modality: ModalityMode) -> EncoderConfig {
        EncoderConfig {
            variant,
            modality,
            ..self.encoder.clone()
        }
    }

    /// Training config specialized for loss-flag ablations.
    pub fn train_with_flags(&self, flags: LossFlags, epochs: usize) -> EncoderTrainConfig {
        EncoderTrainConfig {
            loss_flags: flags,
            epochs,
            ..self.encoder_train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_hash_ignores_out_dir() {
        for name in ["desk", "complementary", "fullscale-shapes"] {
            let a = ExperimentConfig::preset(name, 7, Path::new("/tmp/a")).unwrap();
            let b = ExperimentConfig::preset(name, 7, Path::new("/tmp/b")).unwrap();
            assert_eq!(a.hash(), b.hash(), "{name}");
        }
        let desk = ExperimentConfig::preset("desk", 7, Path::new("/tmp/x")).unwrap();
        let complementary = ExperimentConfig::preset("complementary", 7, Path::new("/tmp/x")).unwrap();
        assert_ne!(desk.hash(), complementary.hash());
        assert!(ExperimentConfig::preset("nope", 7, Path::new("/tmp")).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset("desk", 3, dir.path()).unwrap();
        let path = dir.path().join("config.json");
        cfg.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded.hash(), cfg.hash());
    }

    #[test]
    fn invalid_field_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::preset("desk", 3, dir.path()).unwrap();
        cfg.train_episodes = 99;
        assert!(cfg.validate().is_err());
    }
}
