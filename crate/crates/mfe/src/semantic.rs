//! Frozen stub semantic encoders and the temporal aggregation module.
//!
//! The visual stub maps rendered-frame statistics through a fixed seeded
//! projection; the text stub maps the class one-hot the same way. Both are
//! frozen — only the aggregation module φ (one transformer layer with a
//! learned query) trains.

use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;
use numcore::Tensor;

use crate::params::{Bound, ParamStore};
use crate::transformer::block_forward;
use crate::{MfeError, Result};

/// Per-frame descriptor: channel means/stds plus a 4×4 grayscale grid.
pub const FRAME_FEATURES: usize = 3 + 3 + 16;

/// Deterministic per-frame statistics of a `[frames, h, w, 3]` video.
pub fn frame_features(video: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = video.shape();
    if shape.len() != 4 || shape[3] != 3 {
        return Err(MfeError::Config(format!(
            "video must be frames×h×w×3, got {shape:?}"
        )));
    }
    let (frames, h, w) = (shape[0], shape[1], shape[2]);
    let data = video.data();
    let mut out = vec![0.0f32; frames * FRAME_FEATURES];
    for f in 0..frames {
        let base = f * h * w * 3;
        let mut mean = [0.0f64; 3];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    mean[ch] += data[base + (y * w + x) * 3 + ch] as f64;
                }
            }
        }
        let n = (h * w) as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = [0.0f64; 3];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let d = data[base + (y * w + x) * 3 + ch] as f64 - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        let feat = &mut out[f * FRAME_FEATURES..(f + 1) * FRAME_FEATURES];
        for ch in 0..3 {
            feat[ch] = mean[ch] as f32;
            feat[3 + ch] = (var[ch] / n).sqrt() as f32;
        }
        // 4×4 grayscale pooling grid captures coarse layout (block position)
        for gy in 0..4 {
            for gx in 0..4 {
                let y0 = gy * h / 4;
                let y1 = (gy + 1) * h / 4;
                let x0 = gx * w / 4;
                let x1 = (gx + 1) * w / 4;
                let mut acc = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = base + (y * w + x) * 3;
                        acc += (data[p] as f64 + data[p + 1] as f64 + data[p + 2] as f64) / 3.0;
                    }
                }
                feat[6 + gy * 4 + gx] = (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
    }
    Tensor::from_vec(&[frames, FRAME_FEATURES], out).map_err(|e| MfeError::Numeric(e.to_string()))
}

/// Registers the frozen stub projections. The visual path lifts frame
/// statistics to the embedding width; the text path lifts class one-hots.
pub fn init_stubs(store: &mut ParamStore, seed: u64, embed_dim: usize, n_classes: usize) {
    let mut rng = RngStream::new(seed, 0x57AB);
    let scale = 1.0 / (FRAME_FEATURES as f64).sqrt();
    let ev = Tensor::from_fn(&[FRAME_FEATURES, embed_dim], |_| (rng.normal_f64() * scale) as f32);
    store.insert("stub.visual.proj", ev, false);
    let et = Tensor::from_fn(&[n_classes, embed_dim], |_| rng.normal_f64() as f32);
    store.insert("stub.text.proj", et, false);
}

/// Frozen per-frame embeddings: `[batch, frames, embed]` from stacked frame
/// features `[batch, frames, FRAME_FEATURES]`.
pub fn visual_embed(g: &Graph<f32>, p: &Bound, features: Var) -> Result<Var> {
    Ok(g.matmul(features, p.var("stub.visual.proj")?)?)
}

/// Frozen text embedding of class ids, unit-normalized, computed outside the
/// graph (no gradient ever flows here).
pub fn text_embed(store: &ParamStore, class_ids: &[usize]) -> Result<Tensor<f32>> {
    let proj = store.get("stub.text.proj")?;
    let n_classes = proj.shape()[0];
    let e = proj.shape()[1];
    let mut out = vec![0.0f32; class_ids.len() * e];
    for (i, &c) in class_ids.iter().enumerate() {
        if c >= n_classes {
            return Err(MfeError::Config(format!("class {c} out of range {n_classes}")));
        }
        let row = &proj.data()[c * e..(c + 1) * e];
        let norm = row.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
        for (j, &v) in row.iter().enumerate() {
            out[i * e + j] = v / norm;
        }
    }
    Tensor::from_vec(&[class_ids.len(), e], out).map_err(|e| MfeError::Numeric(e.to_string()))
}

/// Temporal aggregation φ: a learned query token rides one transformer
/// layer over the frame embeddings; its output is the unit-normalized
/// video-level embedding `[batch, embed]`.
pub fn aggregate_video(g: &Graph<f32>, p: &Bound, frame_embeddings: Var, heads: usize) -> Result<Var> {
    let shape = g.shape(frame_embeddings);
    if shape.len() != 3 || shape[1] == 0 {
        return Err(MfeError::Config(format!(
            "aggregate_video wants [batch, frames ≥ 1, embed], got {shape:?}"
        )));
    }
    let (batch, embed) = (shape[0], shape[2]);
    let zero = g.constant(Tensor::zeros(&[batch, 1, embed]));
    let query = g.add_bcast(zero, p.var("agg.query")?)?;
    let stream = g.concat(&[query, frame_embeddings], 1)?;
    let out = block_forward(g, p, "agg.block", stream, heads, None)?;
    let pooled = g.reshape(g.narrow(out, 1, 0, 1)?, &[batch, embed])?;
    Ok(g.l2_normalize_last(pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::init_block;

    fn agg_store(embed: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, 0);
        store.insert_gauss("agg.query", &[embed], &mut rng, true);
        init_block(&mut store, &mut rng, "agg.block", embed, 4 * embed, false);
        store
    }

    #[test]
    fn aggregate_unit_norm_and_single_frame() {
        let store = agg_store(16, 1);
        let g = Graph::new();
        let bound = store.bind(&g);
        let mut rng = RngStream::new(2, 0);
        let one = g.constant(Tensor::from_fn(&[3, 1, 16], |_| rng.normal_f64() as f32));
        let c = aggregate_video(&g, &bound, one, 4).unwrap();
        let v = g.value(c);
        assert_eq!(v.shape(), &[3, 16]);
        for b in 0..3 {
            let norm: f32 = v.data()[b * 16..(b + 1) * 16].iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn aggregate_permutation_of_identical_frames() {
        // identical frame embeddings -> output independent of their order
        let store = agg_store(8, 3);
        let g = Graph::new();
        let bound = store.bind(&g);
        let frame = Tensor::from_fn(&[8], |i| i as f32 * 0.1);
        let mut stacked = Vec::new();
        for _ in 0..4 {
            stacked.extend_from_slice(frame.data());
        }
        let x = g.constant(Tensor::from_vec(&[1, 4, 8], stacked).unwrap());
        let a = g.value(aggregate_video(&g, &bound, x, 2).unwrap());
        let b = g.value(aggregate_video(&g, &bound, x, 2).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_frames_rejected() {
        let store = agg_store(8, 4);
        let g = Graph::new();
        let bound = store.bind(&g);
        let x = g.constant(Tensor::zeros(&[1, 0, 8]));
        assert!(aggregate_video(&g, &bound, x, 2).is_err());
    }

    #[test]
    fn frame_features_track_block_position() {
        let synth = synthdata::SynthConfig::desk(5);
        let latents = synthdata::clip_latents(&synth, 0);
        let video = synthdata::render_clip_video(&synth, &latents[0]);
        let feats = frame_features(&video).unwrap();
        assert_eq!(feats.shape(), &[synth.frames_per_clip, FRAME_FEATURES]);
        // grid cells differ across frames because the block moves
        let f0 = &feats.data()[6..22];
        let last = (synth.frames_per_clip - 1) * FRAME_FEATURES;
        let f_last = &feats.data()[last + 6..last + 22];
        assert_ne!(f0, f_last);
    }
}
