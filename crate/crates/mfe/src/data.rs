//! In-memory view of a preprocessed dataset for encoder training: epoched
//! brain tensors, precomputed frame statistics, class ids and splits.

use std::path::Path;

use numcore::Tensor;
use synthdata::manifest::{DatasetManifest, Split};
use synthdata::{cbtf, SynthConfig};

use crate::semantic::frame_features;
use crate::{MfeError, Result};

pub struct ClipExample {
    pub clip_index: usize,
    pub episode: usize,
    pub class_id: usize,
    /// 5 × voxels.
    pub fmri: Tensor<f32>,
    /// channels × samples.
    pub eeg: Tensor<f32>,
    /// frames × FRAME_FEATURES, from the stimulus video.
    pub video_features: Tensor<f32>,
    pub split: Split,
}

pub struct EncoderDataset {
    pub synth: SynthConfig,
    pub examples: Vec<ClipExample>,
}

impl EncoderDataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Loads every epoched clip (those with brain tensors present after
/// preprocessing) along with its stimulus features.
pub fn load_encoder_dataset(root: &Path) -> Result<EncoderDataset> {
    let manifest = DatasetManifest::load(root)?;
    if manifest.preprocessing.is_none() {
        return Err(MfeError::Config(format!(
            "dataset at {} has not been preprocessed",
            root.display()
        )));
    }
    let mut examples = Vec::new();
    for clip in &manifest.clips {
        let (Some(fmri_ref), Some(eeg_ref)) = (&clip.fmri, &clip.eeg) else {
            continue;
        };
        let fmri = cbtf::read_f32(&root.join(&fmri_ref.path))?;
        let eeg = cbtf::read_f32(&root.join(&eeg_ref.path))?;
        let video = cbtf::read_f32(&root.join(&clip.video.path))?;
        examples.push(ClipExample {
            clip_index: clip.clip_index,
            episode: clip.episode,
            class_id: clip.class_id,
            fmri,
            eeg,
            video_features: frame_features(&video)?,
            split: clip.split.clone(),
        });
    }
    if examples.is_empty() {
        return Err(MfeError::Config("no epoched clips in dataset".into()));
    }
    Ok(EncoderDataset {
        synth: manifest.config,
        examples,
    })
}
