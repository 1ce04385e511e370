//! Comparison harnesses: the seven fusion-architecture rows, the four
//! alignment-ablation rows, and the three modality rows, each trained under
//! the reduced ablation budget and evaluated on a shared dataset.

use numcore::Tensor;

use evalkit::{assemble_report, ClipPair, ReportInputs};
use mfe::data::load_encoder_dataset;
use mfe::{
    budget_target, train_encoder, EncoderConfig, EncoderModel, EncoderTrainConfig, FusionVariant,
    LossFlags, ModalityMode,
};
use nld::{encode_training_latent, reconstruct_video, train_decoder, DitModel};
use synthdata::manifest::Split;
use synthdata::DatasetManifest;

use crate::config::ExperimentConfig;
use crate::runlog::RunLog;
use crate::stages::{
    build_codec, dit_config, load_clip_video, schedule_of, semantic_video_embeddings, stage_preprocess,
    stage_synth,
};
use crate::{CliError, Result};

#[derive(Clone, Debug, serde::Serialize)]
pub struct TableRow {
    pub label: String,
    pub two_way: f64,
    pub fifty_way: f64,
    pub frechet: f64,
    pub ssim: f64,
    pub psnr: f64,
    /// Held-out opposite-factor probe R² (modality table only).
    pub opposite_probe_r2: Option<f64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ComparisonTable {
    pub name: String,
    pub config_hash: String,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,2way,50way,fvd,ssim,psnr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                r.label, r.two_way, r.fifty_way, r.frechet, r.ssim, r.psnr
            ));
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<24} {:>7} {:>7} {:>9} {:>7} {:>7}\n",
            self.name, "2-way", "50-way", "FVD", "SSIM", "PSNR"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>7.3} {:>7.3} {:>9.2} {:>7.3} {:>7.2}\n",
                r.label, r.two_way, r.fifty_way, r.frechet, r.ssim, r.psnr
            ));
        }
        out
    }

    fn save(&self, cfg: &ExperimentConfig, stage: &str) -> Result<()> {
        let dir = cfg.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join("table.csv"), self.to_csv())
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        std::fs::write(
            dir.join("table.json"),
            serde_json::to_string_pretty(self).expect("table serializes"),
        )
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Trains one ablation row end to end (encoder, decoder, a short
/// reconstruction pass) and evaluates it.
fn run_row(
    cfg: &ExperimentConfig,
    encoder_cfg: EncoderConfig,
    train_cfg: &EncoderTrainConfig,
    label: &str,
    log: &mut RunLog,
) -> Result<(TableRow, EncoderModel)> {
    let dataset = load_encoder_dataset(&cfg.dataset_dir())?;
    let manifest = DatasetManifest::load(&cfg.dataset_dir())?;

    let outcome = train_encoder(&dataset, encoder_cfg, train_cfg)?;
    if let Some(reason) = outcome.aborted {
        return Err(CliError::Numeric(format!("{label}: {reason}")));
    }
    let encoder = outcome.model;
    for r in &outcome.log {
        let mut scalars = vec![
            ("loss".into(), r.mean_loss),
            ("heldout_2way".into(), r.heldout_2way),
            ("heldout_50way".into(), r.heldout_50way),
        ];
        for (name, value) in &r.terms {
            scalars.push((format!("loss_{name}"), *value));
        }
        log.append(label, r.epoch as u64, &scalars)?;
    }

    // brief decoder training under the ablation budget
    let codec = build_codec(cfg)?;
    let schedule = schedule_of(cfg)?;
    let train_idx = dataset.split_indices(Split::Train);
    let zb = mfe::compute_zb(&encoder, &dataset, &train_idx)?;
    let mut latents = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        let video = load_clip_video(cfg, &manifest, dataset.examples[i].clip_index)?;
        latents.push(encode_training_latent(&codec, &video)?);
    }
    let decoder_cfg = nld::DecoderTrainConfig {
        warmup_steps: cfg.ablation.decoder_warmup_steps,
        conditional_steps: cfg.ablation.decoder_conditional_steps,
        ..cfg.decoder.train.clone()
    };
    let model = DitModel::new(dit_config(cfg, &codec))?;
    let decoder = train_decoder(model, &latents, &zb, &schedule, &decoder_cfg)?;
    if let Some(reason) = decoder.aborted {
        return Err(CliError::Numeric(format!("{label} decoder: {reason}")));
    }

    // reconstruct a small test subset and evaluate
    let mut test_idx = dataset.split_indices(Split::Test);
    test_idx.sort_by_key(|&i| dataset.examples[i].clip_index);
    test_idx.truncate(cfg.ablation.eval_clips.max(2));
    let zb_test = mfe::compute_zb(&encoder, &dataset, &test_idx)?;
    let mut pairs = Vec::with_capacity(test_idx.len());
    for (k, &i) in test_idx.iter().enumerate() {
        let clip_index = dataset.examples[i].clip_index;
        let truth = load_clip_video(cfg, &manifest, clip_index)?;
        let recon = reconstruct_video(
            &decoder.model,
            &codec,
            &schedule,
            &zb_test[k],
            cfg.decoder.sampler,
            cfg.ablation.sample_steps,
            cfg.seed ^ (0xAB1 + clip_index as u64),
        )?;
        pairs.push(ClipPair {
            clip_index,
            recon,
            truth,
        });
    }
    let recon_videos: Vec<Tensor<f32>> = pairs.iter().map(|p| p.recon.clone()).collect();
    let truth_videos: Vec<Tensor<f32>> = pairs.iter().map(|p| p.truth.clone()).collect();
    let queries = semantic_video_embeddings(&encoder, &recon_videos)?;
    let gallery = semantic_video_embeddings(&encoder, &truth_videos)?;
    let report = assemble_report(&ReportInputs {
        pairs: &pairs,
        video_queries: queries,
        video_gallery: gallery,
        config_hash: cfg.hash(),
        split: "test".into(),
        metric_seed: cfg.eval.metric_seed,
        trials: cfg.ablation.trials,
    })?;

    // retrieval columns come from the encoder's held-out brain→video
    // retrieval (the decisive signal at this scale); perceptual columns from
    // the reconstruction report
    let embedded = mfe::embed_split(&encoder, &dataset, &dataset.split_indices(Split::Test))?;
    let (two_way, _) = mfe::retrieval_stats(&embedded);
    let fifty = mfe::nway_top1(&embedded, 50, 20, cfg.eval.metric_seed ^ 0x50);

    Ok((
        TableRow {
            label: label.to_string(),
            two_way,
            fifty_way: fifty,
            frechet: report.aggregate.frechet,
            ssim: report.aggregate.ssim,
            psnr: report.aggregate.psnr,
            opposite_probe_r2: None,
        },
        encoder,
    ))
}

fn ensure_dataset(cfg: &ExperimentConfig) -> Result<()> {
    stage_synth(cfg)?;
    stage_preprocess(cfg)
}

/// The seven encoder rows: Joint, TwoStage, CrossAttn, three SpatialCat
/// splits, DualFusion — budget-matched within 10%.
pub fn ablate_fusion(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    ensure_dataset(cfg)?;
    let splits = cfg.encoder.spatialcat_splits();
    let variants: Vec<(String, FusionVariant)> = vec![
        ("joint".into(), FusionVariant::Joint),
        ("two-stage".into(), FusionVariant::TwoStage),
        ("cross-attn".into(), FusionVariant::CrossAttn),
        (
            format!("spatialcat-f{}-e{}", splits[0].0, splits[0].1),
            FusionVariant::SpatialCat { fmri_tokens: splits[0].0, eeg_tokens: splits[0].1 },
        ),
        (
            format!("spatialcat-f{}-e{}", splits[1].0, splits[1].1),
            FusionVariant::SpatialCat { fmri_tokens: splits[1].0, eeg_tokens: splits[1].1 },
        ),
        (
            format!("spatialcat-f{}-e{}", splits[2].0, splits[2].1),
            FusionVariant::SpatialCat { fmri_tokens: splits[2].0, eeg_tokens: splits[2].1 },
        ),
        ("dual-fusion".into(), FusionVariant::DualFusion),
    ];

    // parameter-budget parity gate before any training
    let target = budget_target(&cfg.encoder) as f64;
    for (label, variant) in &variants {
        let model = EncoderModel::new(cfg.encoder_for(variant.clone(), ModalityMode::Both))?;
        let ratio = model.trainable_params() as f64 / target;
        if (ratio - 1.0).abs() > 0.10 {
            return Err(CliError::Config(format!(
                "variant {label} breaks the parameter budget: {:.1}% of reference",
                ratio * 100.0
            )));
        }
    }

    let mut log = RunLog::create(&cfg.run_dir(), "ablate-fusion")?;
    let train_cfg = cfg.train_with_flags(LossFlags::default(), cfg.ablation.encoder_epochs);
    let mut rows = Vec::new();
    for (label, variant) in variants {
        let encoder_cfg = cfg.encoder_for(variant, ModalityMode::Both);
        let (row, _) = run_row(cfg, encoder_cfg, &train_cfg, &label, &mut log)?;
        rows.push(row);
    }
    let table = ComparisonTable {
        name: "fusion".into(),
        config_hash: cfg.hash(),
        rows,
    };
    table.save(cfg, "ablate-fusion")?;
    Ok(table)
}

/// Full loss vs w/o Vision, w/o Text, w/o Across.
pub fn ablate_alignment(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    ensure_dataset(cfg)?;
    let mut log = RunLog::create(&cfg.run_dir(), "ablate-alignment")?;
    let rows_spec = [
        ("full", LossFlags::default()),
        ("wo-vision", LossFlags::without_vision()),
        ("wo-text", LossFlags::without_text()),
        ("wo-across", LossFlags::without_across()),
    ];
    let mut rows = Vec::new();
    for (label, flags) in rows_spec {
        let train_cfg = cfg.train_with_flags(flags, cfg.ablation.encoder_epochs);
        let encoder_cfg = cfg.encoder_for(cfg.encoder.variant.clone(), ModalityMode::Both);
        let (row, _) = run_row(cfg, encoder_cfg, &train_cfg, label, &mut log)?;
        rows.push(row);
    }
    let table = ComparisonTable {
        name: "alignment".into(),
        config_hash: cfg.hash(),
        rows,
    };
    table.save(cfg, "ablate-alignment")?;
    Ok(table)
}

/// Fused vs fMRI-only vs EEG-only, plus the opposite-factor ridge probe.
pub fn modality_compare(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    ensure_dataset(cfg)?;
    let mut log = RunLog::create(&cfg.run_dir(), "modality-compare")?;
    let train_cfg = cfg.train_with_flags(LossFlags::default(), cfg.ablation.encoder_epochs);

    // opposite-factor recovery from raw features, the planted ceiling
    let probe = {
        let runs: Vec<synthdata::RunData> = (0..cfg.synth.n_episodes.min(4))
            .map(|e| synthdata::synth_run(&cfg.synth, e))
            .collect();
        synthdata::probe::complementarity_probe(&cfg.synth, &runs, 10.0)
    };

    let rows_spec = [
        ("fused", ModalityMode::Both, None),
        ("fmri-only", ModalityMode::FmriOnly, Some(probe.fmri_to_temporal_r2)),
        ("eeg-only", ModalityMode::EegOnly, Some(probe.eeg_to_spatial_r2)),
    ];
    let mut rows = Vec::new();
    for (label, modality, opposite) in rows_spec {
        let encoder_cfg = cfg.encoder_for(cfg.encoder.variant.clone(), modality);
        let (mut row, _) = run_row(cfg, encoder_cfg, &train_cfg, label, &mut log)?;
        row.opposite_probe_r2 = opposite;
        rows.push(row);
    }
    let table = ComparisonTable {
        name: "modality".into(),
        config_hash: cfg.hash(),
        rows,
    };
    table.save(cfg, "modality-compare")?;
    Ok(table)
}
