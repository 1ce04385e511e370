//! Encoder training: AdamW over all encoder parameters, the fusion MLP, the
//! aggregation module and the shared temperature, with the stub semantic
//! encoders frozen. Logs per-epoch loss terms and held-out retrieval.

use serde::{Deserialize, Serialize};

use numcore::graph::Graph;
use numcore::optim::AdamWParams;
use numcore::rng::RngStream;
use numcore::Tensor;

use synthdata::manifest::Split;

use crate::data::EncoderDataset;
use crate::encoder::{EncoderConfig, EncoderModel, ModalityMode};
use crate::loss::{total_contrastive_loss, LossFlags, TEMP_MAX, TEMP_MIN};
use crate::semantic::{aggregate_video, init_stubs, text_embed, visual_embed};
use crate::{MfeError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss_flags: LossFlags,
    pub seed: u64,
    /// Cosine-decay floor as a fraction of `lr` (1.0 = constant rate).
    pub lr_min_fraction: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            loss_flags: LossFlags::default(),
            seed: 7,
            lr_min_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean value of each enabled loss term over the epoch.
    pub terms: Vec<(String, f64)>,
    pub temperature: f32,
    /// Pairwise brain→video 2-way accuracy on the held-out split.
    pub heldout_2way: f64,
    /// Full-gallery top-1 accuracy on the held-out split.
    pub heldout_top1: f64,
    /// Sampled 50-way top-1 accuracy on the held-out split.
    pub heldout_50way: f64,
}

pub struct TrainOutcome {
    pub model: EncoderModel,
    pub log: Vec<EpochRecord>,
    /// Populated when training aborted on divergence (model holds the last
    /// good state).
    pub aborted: Option<String>,
}

/// Batched brain→semantic embeddings for a set of examples; used for the
/// held-out evaluation and by downstream consumers.
pub struct EmbeddedSplit {
    /// Unit-normalized brain retrieval embedding per clip.
    pub brain: Tensor<f32>,
    /// Unit-normalized video embedding per clip.
    pub video: Tensor<f32>,
    pub clip_indices: Vec<usize>,
}

pub fn train_encoder(
    dataset: &EncoderDataset,
    enc_cfg: EncoderConfig,
    tc: &EncoderTrainConfig,
) -> Result<TrainOutcome> {
    let mut model = EncoderModel::new(enc_cfg)?;
    init_stubs(
        &mut model.store,
        model.config.init_seed ^ 0xABCD,
        model.config.embed_dim,
        model.config.n_classes,
    );

    let train_idx = dataset.split_indices(Split::Train);
    let test_idx = dataset.split_indices(Split::Test);
    if train_idx.is_empty() {
        return Err(MfeError::Config("no training clips".into()));
    }

    let mut order_rng = RngStream::new(tc.seed, SHUFFLE_STREAM);
    let mut log = Vec::new();
    let mut snapshot = (model.store.export(), model.store.step);

    for epoch in 0..tc.epochs {
        // cosine decay from lr to lr·lr_min_fraction across the run
        let lr = if tc.epochs > 1 {
            let lo = tc.lr * tc.lr_min_fraction;
            let phase = epoch as f64 / (tc.epochs - 1) as f64;
            lo + (tc.lr - lo) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
        } else {
            tc.lr
        };
        let hp = AdamWParams {
            lr,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: 1e-8,
            weight_decay: tc.weight_decay,
        };
        let mut order = train_idx.clone();
        order_rng.shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut term_sums: Vec<(String, f64)> = Vec::new();
        let mut batches = 0usize;

        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue; // contrastive loss needs in-batch negatives
            }
            let (loss_value, terms) = train_step(&mut model, dataset, chunk, &hp, tc)?;
            if !loss_value.is_finite() {
                // restore the last good epoch snapshot and stop
                let (entries, step) = snapshot;
                model.store = crate::params::ParamStore::import(entries, step);
                return Ok(TrainOutcome {
                    model,
                    log,
                    aborted: Some(format!("non-finite loss at epoch {epoch}")),
                });
            }
            loss_sum += loss_value;
            if term_sums.is_empty() {
                term_sums = terms.iter().map(|t| (t.name.to_string(), 0.0)).collect();
            }
            for (slot, term) in term_sums.iter_mut().zip(&terms) {
                slot.1 += term.value as f64;
            }
            batches += 1;
        }

        let eval_idx = if test_idx.is_empty() { &train_idx } else { &test_idx };
        let embedded = embed_split(&model, dataset, eval_idx)?;
        let (two_way, top1) = retrieval_stats(&embedded);
        let fifty = nway_top1(&embedded, 50, 20, tc.seed ^ 0xEA17);

        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f64,
            terms: term_sums
                .iter()
                .map(|(n, s)| (n.clone(), s / batches.max(1) as f64))
                .collect(),
            temperature: model.store.get("temperature")?.item(),
            heldout_2way: two_way,
            heldout_top1: top1,
            heldout_50way: fifty,
        };
        log.push(record);
        snapshot = (model.store.export(), model.store.step);
    }

    Ok(TrainOutcome {
        model,
        log,
        aborted: None,
    })
}

const SHUFFLE_STREAM: u64 = 0x51;

fn train_step(
    model: &mut EncoderModel,
    dataset: &EncoderDataset,
    batch: &[usize],
    hp: &AdamWParams,
    tc: &EncoderTrainConfig,
) -> Result<(f64, Vec<crate::loss::LossTerm>)> {
    let g = Graph::new();
    let bound = model.store.bind(&g);

    let fmri_refs: Vec<&Tensor<f32>> = batch.iter().map(|&i| &dataset.examples[i].fmri).collect();
    let eeg_refs: Vec<&Tensor<f32>> = batch.iter().map(|&i| &dataset.examples[i].eeg).collect();
    let fmri_slabs = match model.config.modality {
        ModalityMode::EegOnly => None,
        _ => Some(g.constant(model.fmri_tokenizer.slabs(&fmri_refs)?)),
    };
    let eeg_slabs = match model.config.modality {
        ModalityMode::FmriOnly => None,
        _ => Some(g.constant(model.eeg_tokenizer.slabs(&eeg_refs)?)),
    };

    let out = model.forward(&g, &bound, fmri_slabs, eeg_slabs)?;

    // semantic targets
    let feats = Tensor::stack(
        &batch
            .iter()
            .map(|&i| dataset.examples[i].video_features.clone())
            .collect::<Vec<_>>(),
    )
    .map_err(|e| MfeError::Numeric(e.to_string()))?;
    let feats = g.constant(feats);
    let frame_emb = visual_embed(&g, &bound, feats)?;
    let c_v = aggregate_video(&g, &bound, frame_emb, model.config.heads)?;
    let class_ids: Vec<usize> = batch.iter().map(|&i| dataset.examples[i].class_id).collect();
    let c_t = g.constant(text_embed(&model.store, &class_ids)?);

    let (total, terms) =
        total_contrastive_loss(&g, &bound, out.c_f, out.c_e, c_v, c_t, tc.loss_flags)?;
    let loss_value = g.value(total).item() as f64;
    if !loss_value.is_finite() {
        return Ok((loss_value, terms));
    }

    let grads = g.backward(total)?;
    model.store.apply_gradients(&bound, &grads, hp)?;
    model.store.clamp_scalar("temperature", TEMP_MIN, TEMP_MAX)?;
    Ok((loss_value, terms))
}

/// Embeds a set of clips without recording gradients: brain retrieval
/// embedding (normalized sum of the available class embeddings) and video
/// embedding per clip.
pub fn embed_split(
    model: &EncoderModel,
    dataset: &EncoderDataset,
    indices: &[usize],
) -> Result<EmbeddedSplit> {
    let e = model.config.embed_dim;
    let mut brain = Vec::with_capacity(indices.len() * e);
    let mut video = Vec::with_capacity(indices.len() * e);
    for chunk in indices.chunks(64) {
        let g = Graph::new();
        let bound = model.store.bind(&g);
        let fmri_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &dataset.examples[i].fmri).collect();
        let eeg_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &dataset.examples[i].eeg).collect();
        let fmri_slabs = match model.config.modality {
            ModalityMode::EegOnly => None,
            _ => Some(g.constant(model.fmri_tokenizer.slabs(&fmri_refs)?)),
        };
        let eeg_slabs = match model.config.modality {
            ModalityMode::FmriOnly => None,
            _ => Some(g.constant(model.eeg_tokenizer.slabs(&eeg_refs)?)),
        };
        let out = model.forward(&g, &bound, fmri_slabs, eeg_slabs)?;

        let feats = Tensor::stack(
            &chunk
                .iter()
                .map(|&i| dataset.examples[i].video_features.clone())
                .collect::<Vec<_>>(),
        )
        .map_err(|er| MfeError::Numeric(er.to_string()))?;
        let feats = g.constant(feats);
        let frame_emb = visual_embed(&g, &bound, feats)?;
        let c_v = g.value(aggregate_video(&g, &bound, frame_emb, model.config.heads)?);

        let r_b = match (out.c_f, out.c_e) {
            (Some(f), Some(ev)) => {
                let sum = g.add(f, ev)?;
                g.value(g.l2_normalize_last(sum))
            }
            (Some(f), None) => g.value(f),
            (None, Some(ev)) => g.value(ev),
            (None, None) => return Err(MfeError::Config("encoder produced no class embeddings".into())),
        };
        brain.extend_from_slice(r_b.data());
        video.extend_from_slice(c_v.data());
    }
    Ok(EmbeddedSplit {
        brain: Tensor::from_vec(&[indices.len(), e], brain)
            .map_err(|er| MfeError::Numeric(er.to_string()))?,
        video: Tensor::from_vec(&[indices.len(), e], video)
            .map_err(|er| MfeError::Numeric(er.to_string()))?,
        clip_indices: indices.iter().map(|&i| dataset.examples[i].clip_index).collect(),
    })
}

/// Unified brain representations (`z_b`, one `[tokens, hidden]` tensor per
/// clip) computed with the encoder frozen; the decoder's conditioning input.
pub fn compute_zb(
    model: &EncoderModel,
    dataset: &EncoderDataset,
    indices: &[usize],
) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let g = Graph::new();
        let bound = model.store.bind(&g);
        let fmri_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &dataset.examples[i].fmri).collect();
        let eeg_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &dataset.examples[i].eeg).collect();
        let fmri_slabs = match model.config.modality {
            ModalityMode::EegOnly => None,
            _ => Some(g.constant(model.fmri_tokenizer.slabs(&fmri_refs)?)),
        };
        let eeg_slabs = match model.config.modality {
            ModalityMode::FmriOnly => None,
            _ => Some(g.constant(model.eeg_tokenizer.slabs(&eeg_refs)?)),
        };
        let enc = model.forward(&g, &bound, fmri_slabs, eeg_slabs)?;
        let zb = g.value(enc.z_b);
        let (tokens, width) = (zb.shape()[1], zb.shape()[2]);
        for (row, _) in chunk.iter().enumerate() {
            out.push(
                zb.rows(row, 1)
                    .and_then(|t| t.reshape(&[tokens, width]))
                    .map_err(|e| MfeError::Numeric(e.to_string()))?,
            );
        }
    }
    Ok(out)
}

/// Seeded N-way top-1 over sampled distractor sets, brain queries against
/// the video gallery.
pub fn nway_top1(embedded: &EmbeddedSplit, n_way: usize, trials: usize, seed: u64) -> f64 {
    let n = embedded.clip_indices.len();
    if n < 2 {
        return 1.0;
    }
    let n_way = n_way.min(n);
    let e = embedded.brain.shape()[1];
    let sim = |i: usize, j: usize| -> f32 {
        let a = &embedded.brain.data()[i * e..(i + 1) * e];
        let b = &embedded.video.data()[j * e..(j + 1) * e];
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    };
    let mut rng = RngStream::new(seed, 0x50AE);
    let mut hits = 0usize;
    let mut total = 0usize;
    for q in 0..n {
        let positive = sim(q, q);
        for _ in 0..trials {
            let mut win = true;
            let mut drawn = 0usize;
            while drawn < n_way - 1 {
                let j = rng.below(n as u64) as usize;
                if j == q {
                    continue;
                }
                drawn += 1;
                if sim(q, j) >= positive {
                    win = false;
                    // keep drawing to preserve the stream position
                }
            }
            hits += win as usize;
            total += 1;
        }
    }
    hits as f64 / total as f64
}

/// Deterministic retrieval statistics: all-pairs 2-way accuracy and
/// full-gallery top-1, brain queries against video gallery.
pub fn retrieval_stats(embedded: &EmbeddedSplit) -> (f64, f64) {
    let n = embedded.clip_indices.len();
    if n < 2 {
        return (1.0, 1.0);
    }
    let e = embedded.brain.shape()[1];
    let sim = |i: usize, j: usize| -> f32 {
        let a = &embedded.brain.data()[i * e..(i + 1) * e];
        let b = &embedded.video.data()[j * e..(j + 1) * e];
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    };
    let mut two_way_hits = 0usize;
    let mut two_way_total = 0usize;
    let mut top1_hits = 0usize;
    for i in 0..n {
        let positive = sim(i, i);
        let mut best_j = 0usize;
        let mut best = f32::MIN;
        for j in 0..n {
            let s = sim(i, j);
            if s > best {
                best = s;
                best_j = j;
            }
            if j != i {
                two_way_total += 1;
                if positive > s {
                    two_way_hits += 1;
                }
            }
        }
        if best_j == i {
            top1_hits += 1;
        }
    }
    (
        two_way_hits as f64 / two_way_total as f64,
        top1_hits as f64 / n as f64,
    )
}
