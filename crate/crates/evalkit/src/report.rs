//! Metric report assembly over reconstructed/ground-truth clip pairs, with
//! stable serialization and a CSV export matching the evaluation table
//! layout (2-way, 50-way, Fréchet surrogate, DTC, CTC, SSIM, PSNR).

use serde::{Deserialize, Serialize};

use numcore::rng::RngStream;
use numcore::Tensor;

use crate::embed::{clip_embedding, FrameEmbedder, ToyVisualEmbedder};
use crate::metrics::{frechet_distance, nway_topk, psnr, ssim, temporal_consistency};
use crate::{EvalError, Result};

/// One reconstructed/ground-truth pair, pixel range `[0, 1]`.
pub struct ClipPair {
    pub clip_index: usize,
    pub recon: Tensor<f32>,
    pub truth: Tensor<f32>,
}

/// Everything the assembler needs beyond the raw clips: clip-level semantic
/// embeddings from the trained aggregation path (queries = reconstructions,
/// gallery = ground truth).
pub struct ReportInputs<'a> {
    pub pairs: &'a [ClipPair],
    pub video_queries: Tensor<f32>,
    pub video_gallery: Tensor<f32>,
    pub config_hash: String,
    pub split: String,
    pub metric_seed: u64,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_index: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub dtc: f64,
    pub ctc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub video_2way: f64,
    pub video_50way: f64,
    pub frame_2way: f64,
    pub frame_50way: f64,
    pub frechet: f64,
    pub dtc: f64,
    pub ctc: f64,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub split: String,
    pub metric_seed: u64,
    pub trials: usize,
    pub n_clips: usize,
    pub clips: Vec<ClipMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricReport {
    /// Stable-field-order JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row under the table header
    /// `label,2way,50way,fvd,ssim,psnr`.
    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.aggregate.video_2way,
            self.aggregate.video_50way,
            self.aggregate.frechet,
            self.aggregate.ssim,
            self.aggregate.psnr
        )
    }

    pub const CSV_HEADER: &'static str = "label,2way,50way,fvd,ssim,psnr";
}

/// Computes the full report. Frame-based retrieval embeds every frame with
/// the toy embedder and retrieves per frame position across clips; DTC- and
/// CTC-style consistency use two independently seeded toy embedders.
pub fn assemble_report(inputs: &ReportInputs) -> Result<MetricReport> {
    let n = inputs.pairs.len();
    if n < 2 {
        return Err(EvalError::Contract(format!(
            "report needs at least two clips, got {n}"
        )));
    }
    if inputs.video_queries.shape()[0] != n || inputs.video_gallery.shape()[0] != n {
        return Err(EvalError::Shape(
            "video embedding rows must match clip count".into(),
        ));
    }

    let dtc_embedder = ToyVisualEmbedder::new(0xD7C0, 32);
    let ctc_embedder = ToyVisualEmbedder::new(0xC7C0, 32);

    // per-clip perceptual metrics
    let mut clips = Vec::with_capacity(n);
    for pair in inputs.pairs {
        if pair.recon.shape() != pair.truth.shape() {
            return Err(EvalError::Shape(format!(
                "clip {}: recon {:?} vs truth {:?}",
                pair.clip_index,
                pair.recon.shape(),
                pair.truth.shape()
            )));
        }
        let frames = pair.recon.shape()[0];
        let mut ssim_acc = 0.0;
        let mut psnr_acc = 0.0;
        for f in 0..frames {
            let rf = frame_of(&pair.recon, f)?;
            let tf = frame_of(&pair.truth, f)?;
            ssim_acc += ssim(&rf, &tf)?;
            psnr_acc += psnr(&rf, &tf)?;
        }
        let dtc = temporal_consistency(&dtc_embedder.embed_frames(&pair.recon)?)?;
        let ctc = temporal_consistency(&ctc_embedder.embed_frames(&pair.recon)?)?;
        clips.push(ClipMetrics {
            clip_index: pair.clip_index,
            ssim: ssim_acc / frames as f64,
            psnr: psnr_acc / frames as f64,
            dtc,
            ctc,
        });
    }

    // video-based retrieval over the provided semantic embeddings
    let mut rng = RngStream::new(inputs.metric_seed, 0xE7A);
    let video_2way = nway_topk(&inputs.video_queries, &inputs.video_gallery, 2, 1, inputs.trials, &mut rng)?;
    let video_50way_n = 50.min(n);
    let video_50way = nway_topk(
        &inputs.video_queries,
        &inputs.video_gallery,
        video_50way_n,
        1,
        inputs.trials,
        &mut rng,
    )?;

    // frame-based retrieval with the toy embedder, per frame position
    let frame_embedder = ToyVisualEmbedder::new(0xF4A3, 32);
    let frames = inputs.pairs[0].recon.shape()[0];
    let dim = frame_embedder.dim();
    let mut frame_2way_acc = 0.0;
    let mut frame_50way_acc = 0.0;
    for f in 0..frames {
        let mut q = Vec::with_capacity(n * dim);
        let mut gal = Vec::with_capacity(n * dim);
        for pair in inputs.pairs {
            let qe = frame_embedder.embed_frames(&pair.recon)?;
            let ge = frame_embedder.embed_frames(&pair.truth)?;
            q.extend_from_slice(&qe.data()[f * dim..(f + 1) * dim]);
            gal.extend_from_slice(&ge.data()[f * dim..(f + 1) * dim]);
        }
        let q = Tensor::from_vec(&[n, dim], q).map_err(|e| EvalError::Contract(e.to_string()))?;
        let gal = Tensor::from_vec(&[n, dim], gal).map_err(|e| EvalError::Contract(e.to_string()))?;
        frame_2way_acc += nway_topk(&q, &gal, 2, 1, inputs.trials, &mut rng)?;
        frame_50way_acc += nway_topk(&q, &gal, video_50way_n, 1, inputs.trials, &mut rng)?;
    }

    // Fréchet surrogate over toy clip embeddings
    let fvd_embedder = ToyVisualEmbedder::new(0xF7D, 16);
    let mut recon_set = Vec::with_capacity(n * 16);
    let mut truth_set = Vec::with_capacity(n * 16);
    for pair in inputs.pairs {
        recon_set.extend(clip_embedding(&fvd_embedder, &pair.recon)?);
        truth_set.extend(clip_embedding(&fvd_embedder, &pair.truth)?);
    }
    let recon_set = Tensor::from_vec(&[n, 16], recon_set).map_err(|e| EvalError::Contract(e.to_string()))?;
    let truth_set = Tensor::from_vec(&[n, 16], truth_set).map_err(|e| EvalError::Contract(e.to_string()))?;
    let frechet = frechet_distance(&recon_set, &truth_set)?;

    let mean = |f: fn(&ClipMetrics) -> f64| clips.iter().map(f).sum::<f64>() / n as f64;
    let aggregate = AggregateMetrics {
        video_2way,
        video_50way,
        frame_2way: frame_2way_acc / frames as f64,
        frame_50way: frame_50way_acc / frames as f64,
        frechet,
        dtc: mean(|c| c.dtc),
        ctc: mean(|c| c.ctc),
        ssim: mean(|c| c.ssim),
        psnr: mean(|c| c.psnr),
    };

    Ok(MetricReport {
        config_hash: inputs.config_hash.clone(),
        split: inputs.split.clone(),
        metric_seed: inputs.metric_seed,
        trials: inputs.trials,
        n_clips: n,
        clips,
        aggregate,
    })
}

fn frame_of(video: &Tensor<f32>, f: usize) -> Result<Tensor<f32>> {
    let shape = video.shape().to_vec();
    video
        .rows(f, 1)
        .and_then(|t| t.reshape(&shape[1..]))
        .map_err(|e| EvalError::Shape(e.to_string()))
}
