//! Dataset manifest: split assignments, per-clip records, file integrity.
//!
//! Serialized as JSON with a stable field order; the manifest is the single
//! source of truth for what a dataset directory contains.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unassigned,
    Train,
    Test,
}

/// One stimulus clip and its (optional, post-preprocessing) brain tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_index: usize,
    pub episode: usize,
    pub clip_in_episode: usize,
    pub class_id: usize,
    pub caption: String,
    pub seed: u64,
    pub split: Split,
    pub video: FileRef,
    /// 5×V response window, present once preprocessing has run.
    pub fmri: Option<FileRef>,
    /// channels×samples clip window, present once preprocessing has run.
    pub eeg: Option<FileRef>,
}

/// A tensor file reference with integrity metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub shape: Vec<usize>,
    /// Offset of the payload within the file (header bytes).
    pub payload_offset: u64,
    pub bytes: u64,
    pub checksum: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub episode: usize,
    pub fmri: FileRef,
    pub eeg: FileRef,
    pub ecg: FileRef,
    pub tr_events: Vec<usize>,
    /// Ground-truth R-peak sample indices planted by the generator.
    pub ecg_beats: Vec<usize>,
}

/// Summary left behind by the preprocessing stage.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PreprocProvenance {
    pub lag_frames: usize,
    pub dropped_clips: usize,
    pub flagged_voxels: usize,
    pub removed_components: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: SynthConfig,
    pub config_hash: String,
    pub mixing_a_f: FileRef,
    pub mixing_b_e: FileRef,
    pub runs: Vec<RunRecord>,
    pub clips: Vec<ClipRecord>,
    pub preprocessing: Option<PreprocProvenance>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("integrity failure for {path}: {reason}")]
    Integrity { path: String, reason: String },
    #[error("split error: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

/// FNV-1a over a byte stream; the checksum used in [`FileRef`].
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl FileRef {
    /// Builds a reference for a file already on disk.
    pub fn describe(root: &Path, rel: &str, shape: &[usize], payload_offset: u64) -> Result<Self> {
        let full = root.join(rel);
        let bytes = std::fs::read(&full).map_err(|e| ManifestError::Io {
            path: full.display().to_string(),
            source: e,
        })?;
        Ok(Self {
            path: rel.to_string(),
            shape: shape.to_vec(),
            payload_offset,
            bytes: bytes.len() as u64,
            checksum: format!("{:016x}", fnv1a64(&bytes)),
        })
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        let full = root.join(&self.path);
        let bytes = std::fs::read(&full).map_err(|e| ManifestError::Io {
            path: full.display().to_string(),
            source: e,
        })?;
        if bytes.len() as u64 != self.bytes {
            return Err(ManifestError::Integrity {
                path: self.path.clone(),
                reason: format!("size {} != recorded {}", bytes.len(), self.bytes),
            });
        }
        if self.payload_offset > self.bytes {
            return Err(ManifestError::Integrity {
                path: self.path.clone(),
                reason: "payload offset beyond end of file".into(),
            });
        }
        let sum = format!("{:016x}", fnv1a64(&bytes));
        if sum != self.checksum {
            return Err(ManifestError::Integrity {
                path: self.path.clone(),
                reason: format!("checksum {sum} != recorded {}", self.checksum),
            });
        }
        Ok(())
    }
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| ManifestError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(&path, json).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(path)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Json {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Assigns whole episodes to train/test. The first `train_episodes`
    /// episodes train, the final `test_episodes` test; counts must cover
    /// every episode exactly once.
    pub fn split_train_test(&mut self, train_episodes: usize, test_episodes: usize) -> Result<()> {
        if train_episodes + test_episodes != self.config.n_episodes {
            return Err(ManifestError::Split(format!(
                "{} train + {} test episodes != {} total",
                train_episodes, test_episodes, self.config.n_episodes
            )));
        }
        for clip in &mut self.clips {
            clip.split = if clip.episode < train_episodes {
                Split::Train
            } else {
                Split::Test
            };
        }
        Ok(())
    }

    pub fn clips_in_split(&self, split: &Split) -> Vec<&ClipRecord> {
        self.clips.iter().filter(|c| &c.split == split).collect()
    }

    /// Verifies the split is a partition and every referenced file checks out.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for clip in &self.clips {
            if !seen.insert(clip.clip_index) {
                return Err(ManifestError::Integrity {
                    path: format!("clip {}", clip.clip_index),
                    reason: "referenced more than once".into(),
                });
            }
        }
        if seen.len() != self.config.total_clips() {
            return Err(ManifestError::Integrity {
                path: "manifest".into(),
                reason: format!(
                    "{} clips recorded, config expects {}",
                    seen.len(),
                    self.config.total_clips()
                ),
            });
        }
        self.mixing_a_f.verify(root)?;
        self.mixing_b_e.verify(root)?;
        for run in &self.runs {
            run.fmri.verify(root)?;
            run.eeg.verify(root)?;
            run.ecg.verify(root)?;
        }
        for clip in &self.clips {
            clip.video.verify(root)?;
            if let Some(f) = &clip.fmri {
                f.verify(root)?;
            }
            if let Some(f) = &clip.eeg {
                f.verify(root)?;
            }
        }
        Ok(())
    }
}

/// Canonical hash of any serializable config, stamped on artifacts.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}
