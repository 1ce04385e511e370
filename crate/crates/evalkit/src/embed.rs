//! Pluggable frame embedders for the perceptual metrics. The built-in toy
//! embedder projects simple frame statistics through a fixed seeded map —
//! a stand-in for the pretrained backbones used at full scale.

use numcore::rng::RngStream;
use numcore::Tensor;

use crate::{EvalError, Result};

/// Embeds every frame of a `[frames, h, w, 3]` video into `[frames, d]`.
pub trait FrameEmbedder {
    fn embed_frames(&self, video: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn dim(&self) -> usize;
}

/// Deterministic statistics → seeded linear map.
pub struct ToyVisualEmbedder {
    projection: Tensor<f32>,
    dim: usize,
}

const GRID: usize = 4;
const FEATS: usize = 6 + GRID * GRID;

impl ToyVisualEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = RngStream::new(seed, 0x70E);
        let scale = 1.0 / (FEATS as f64).sqrt();
        let projection = Tensor::from_fn(&[FEATS, dim], |_| (rng.normal_f64() * scale) as f32);
        Self { projection, dim }
    }

    fn features(video: &Tensor<f32>) -> Result<Tensor<f32>> {
        let shape = video.shape();
        if shape.len() != 4 || shape[3] != 3 {
            return Err(EvalError::Shape(format!(
                "embedder wants [frames, h, w, 3], got {shape:?}"
            )));
        }
        let (frames, h, w) = (shape[0], shape[1], shape[2]);
        let data = video.data();
        let mut out = vec![0.0f32; frames * FEATS];
        for f in 0..frames {
            let base = f * h * w * 3;
            let mut mean = [0.0f64; 3];
            for px in data[base..base + h * w * 3].chunks_exact(3) {
                for ch in 0..3 {
                    mean[ch] += px[ch] as f64;
                }
            }
            let n = (h * w) as f64;
            for m in mean.iter_mut() {
                *m /= n;
            }
            let mut var = [0.0f64; 3];
            for px in data[base..base + h * w * 3].chunks_exact(3) {
                for ch in 0..3 {
                    let d = px[ch] as f64 - mean[ch];
                    var[ch] += d * d;
                }
            }
            let feat = &mut out[f * FEATS..(f + 1) * FEATS];
            for ch in 0..3 {
                feat[ch] = mean[ch] as f32;
                feat[3 + ch] = (var[ch] / n).sqrt() as f32;
            }
            for gy in 0..GRID {
                for gx in 0..GRID {
                    let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
                    let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
                    let mut acc = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let p = base + (y * w + x) * 3;
                            acc += (data[p] as f64 + data[p + 1] as f64 + data[p + 2] as f64) / 3.0;
                        }
                    }
                    feat[6 + gy * GRID + gx] = (acc / ((y1 - y0).max(1) * (x1 - x0).max(1)) as f64) as f32;
                }
            }
        }
        Tensor::from_vec(&[frames, FEATS], out).map_err(|e| EvalError::Contract(e.to_string()))
    }
}

impl FrameEmbedder for ToyVisualEmbedder {
    fn embed_frames(&self, video: &Tensor<f32>) -> Result<Tensor<f32>> {
        let feats = Self::features(video)?;
        feats
            .matmul(&self.projection)
            .map_err(|e| EvalError::Contract(e.to_string()))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Mean of the frame embeddings — the clip-level vector used for the
/// Fréchet surrogate.
pub fn clip_embedding(embedder: &dyn FrameEmbedder, video: &Tensor<f32>) -> Result<Vec<f32>> {
    let frames = embedder.embed_frames(video)?;
    let (n, d) = (frames.shape()[0], frames.shape()[1]);
    let mut mean = vec![0.0f32; d];
    for f in 0..n {
        for j in 0..d {
            mean[j] += frames.data()[f * d + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f32;
    }
    Ok(mean)
}
