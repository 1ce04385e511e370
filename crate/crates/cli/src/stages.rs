//! Pipeline stages: synth → preprocess → train-encoder → train-decoder →
//! reconstruct → evaluate. Every stage persists its artifact under
//! `out/<config-hash>/<stage>/` and is skipped when that artifact already
//! exists, so the pipeline resumes cleanly.

use std::path::PathBuf;

use numcore::Tensor;

use evalkit::{assemble_report, ClipPair, MetricReport, ReportInputs};
use mfe::checkpoint::{load_checkpoint, save_checkpoint};
use mfe::data::{load_encoder_dataset, EncoderDataset};
use mfe::{train_encoder, EncoderModel};
use nld::{
    encode_training_latent, make_schedule, reconstruct_video, train_decoder, DitConfig, DitModel,
    LatentCodec, NoiseSchedule,
};
use synthdata::manifest::Split;
use synthdata::{generate_dataset, DatasetManifest};

use crate::config::ExperimentConfig;
use crate::runlog::RunLog;
use crate::{CliError, Result};

/// Stamp stored in checkpoint headers; ties artifacts to the producing
/// config (excluding the output location).
fn artifact_stamp(cfg: &ExperimentConfig, section: &str) -> serde_json::Value {
    serde_json::json!({
        "experiment_hash": cfg.hash(),
        "section": section,
    })
}

fn check_stamp(header: &mfe::checkpoint::CheckpointHeader, cfg: &ExperimentConfig, what: &str) -> Result<()> {
    let expect = cfg.hash();
    let got = header
        .config
        .get("experiment_hash")
        .and_then(|v| v.as_str())
        .unwrap_or("");
    if got != expect {
        return Err(CliError::Config(format!(
            "{what} checkpoint was produced by config {got}, current config is {expect}"
        )));
    }
    Ok(())
}

pub fn stage_synth(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let dir = cfg.dataset_dir();
    if dir.join(synthdata::manifest::MANIFEST_FILE).exists() {
        return Ok(DatasetManifest::load(&dir)?);
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let manifest = generate_dataset(&cfg.synth, &dir, (cfg.train_episodes, cfg.test_episodes))?;
    cfg.save(&cfg.run_dir().join("config.json"))?;
    Ok(manifest)
}

pub fn stage_preprocess(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.dataset_dir();
    let manifest = DatasetManifest::load(&dir)?;
    if manifest.preprocessing.is_some() {
        return Ok(());
    }
    let mut log = RunLog::create(&cfg.run_dir(), "preprocess")?;
    let run_logs = preproc::preprocess_dataset(&dir, &cfg.preproc)?;
    for (i, rl) in run_logs.iter().enumerate() {
        log.append(
            "run",
            i as u64,
            &[
                ("clips_epoched".into(), rl.clips_epoched as f64),
                ("clips_dropped".into(), rl.clips_dropped as f64),
                ("flagged_voxels".into(), rl.flagged_voxels as f64),
                ("ica_removed".into(), rl.ica_removed_components.len() as f64),
            ],
        )?;
    }
    Ok(())
}

pub fn encoder_ckpt_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.stage_dir("encoder")
}

pub fn stage_train_encoder(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = encoder_ckpt_dir(cfg);
    if dir.join(mfe::checkpoint::HEADER_FILE).exists() {
        return Ok(dir);
    }
    let dataset = load_encoder_dataset(&cfg.dataset_dir())?;
    let mut log = RunLog::create(&cfg.run_dir(), "train-encoder")?;
    let outcome = train_encoder(&dataset, cfg.encoder.clone(), &cfg.encoder_train)?;
    for r in &outcome.log {
        let mut scalars = vec![
            ("loss".into(), r.mean_loss),
            ("heldout_2way".into(), r.heldout_2way),
            ("heldout_top1".into(), r.heldout_top1),
            ("heldout_50way".into(), r.heldout_50way),
            ("temperature".into(), r.temperature as f64),
        ];
        for (name, value) in &r.terms {
            scalars.push((format!("loss_{name}"), *value));
        }
        log.append("epoch", r.epoch as u64, &scalars)?;
    }
    if let Some(reason) = outcome.aborted {
        return Err(CliError::Numeric(format!("encoder training aborted: {reason}")));
    }
    save_checkpoint(&dir, "encoder", &artifact_stamp(cfg, "encoder"), &outcome.model.store)?;
    Ok(dir)
}

pub fn load_encoder(cfg: &ExperimentConfig) -> Result<EncoderModel> {
    let (header, store) = load_checkpoint(&encoder_ckpt_dir(cfg))?;
    check_stamp(&header, cfg, "encoder")?;
    Ok(EncoderModel::from_store(cfg.encoder.clone(), store)?)
}

pub fn build_codec(cfg: &ExperimentConfig) -> Result<LatentCodec> {
    Ok(LatentCodec::new(
        cfg.synth.frames_per_clip,
        cfg.synth.frame_size,
        cfg.synth.frame_size,
        cfg.decoder.patch,
        cfg.decoder.codec_seed,
    )?)
}

pub fn dit_config(cfg: &ExperimentConfig, codec: &LatentCodec) -> DitConfig {
    DitConfig {
        layers: cfg.decoder.layers,
        width: cfg.decoder.width,
        heads: cfg.decoder.heads,
        mlp_hidden: cfg.decoder.mlp_hidden,
        latent_dim: codec.patch_dim(),
        latent_tokens: codec.tokens(),
        cond_tokens: cfg.encoder.token_count,
        cond_dim: cfg.encoder.hidden_dim,
        lora: cfg.decoder.lora,
        t_steps: cfg.decoder.t_steps,
        init_seed: cfg.seed ^ 0xD17,
    }
}

pub fn schedule_of(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    Ok(make_schedule(cfg.decoder.t_steps, 1e-4, 0.02)?)
}

/// Loads a stimulus video for a clip index.
pub fn load_clip_video(cfg: &ExperimentConfig, manifest: &DatasetManifest, clip_index: usize) -> Result<Tensor<f32>> {
    let record = manifest
        .clips
        .iter()
        .find(|c| c.clip_index == clip_index)
        .ok_or_else(|| CliError::Data(format!("clip {clip_index} not in manifest")))?;
    Ok(synthdata::cbtf::read_f32(&cfg.dataset_dir().join(&record.video.path))?)
}

pub fn decoder_ckpt_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.stage_dir("decoder")
}

pub fn stage_train_decoder(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = decoder_ckpt_dir(cfg);
    if dir.join(mfe::checkpoint::HEADER_FILE).exists() {
        return Ok(dir);
    }
    let dataset = load_encoder_dataset(&cfg.dataset_dir())?;
    let manifest = DatasetManifest::load(&cfg.dataset_dir())?;
    let encoder = load_encoder(cfg)?;
    let codec = build_codec(cfg)?;
    let schedule = schedule_of(cfg)?;

    let train_idx = dataset.split_indices(Split::Train);
    let zb = mfe::compute_zb(&encoder, &dataset, &train_idx)?;
    let mut latents = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        let video = load_clip_video(cfg, &manifest, dataset.examples[i].clip_index)?;
        latents.push(encode_training_latent(&codec, &video)?);
    }

    let model = DitModel::new(dit_config(cfg, &codec))?;
    let mut log = RunLog::create(&cfg.run_dir(), "train-decoder")?;
    let outcome = train_decoder(model, &latents, &zb, &schedule, &cfg.decoder.train)?;
    for r in &outcome.log {
        log.append(&r.phase, r.step as u64, &[("loss".into(), r.loss)])?;
    }
    if let Some(reason) = outcome.aborted {
        return Err(CliError::Numeric(format!("decoder training aborted: {reason}")));
    }
    save_checkpoint(&dir, "decoder", &artifact_stamp(cfg, "decoder"), &outcome.model.store)?;
    Ok(dir)
}

pub fn load_decoder(cfg: &ExperimentConfig, codec: &LatentCodec) -> Result<DitModel> {
    let (header, store) = load_checkpoint(&decoder_ckpt_dir(cfg))?;
    check_stamp(&header, cfg, "decoder")?;
    Ok(DitModel::from_store(dit_config(cfg, codec), store))
}

/// Test clips selected for reconstruction/evaluation (ordered by clip
/// index, capped by `eval.max_clips`).
pub fn eval_indices(cfg: &ExperimentConfig, dataset: &EncoderDataset) -> Vec<usize> {
    let mut idx = dataset.split_indices(Split::Test);
    idx.sort_by_key(|&i| dataset.examples[i].clip_index);
    if cfg.eval.max_clips > 0 {
        idx.truncate(cfg.eval.max_clips);
    }
    idx
}

pub fn recon_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.stage_dir("recon")
}

pub fn stage_reconstruct(cfg: &ExperimentConfig, png: bool) -> Result<PathBuf> {
    let dir = recon_dir(cfg);
    if dir.join("done.json").exists() {
        return Ok(dir);
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let dataset = load_encoder_dataset(&cfg.dataset_dir())?;
    let encoder = load_encoder(cfg)?;
    let codec = build_codec(cfg)?;
    let decoder = load_decoder(cfg, &codec)?;
    let schedule = schedule_of(cfg)?;

    let indices = eval_indices(cfg, &dataset);
    if indices.is_empty() {
        return Err(CliError::Data("no test clips to reconstruct".into()));
    }
    let zb = mfe::compute_zb(&encoder, &dataset, &indices)?;
    let mut written = Vec::new();
    for (k, &i) in indices.iter().enumerate() {
        let clip_index = dataset.examples[i].clip_index;
        let video = reconstruct_video(
            &decoder,
            &codec,
            &schedule,
            &zb[k],
            cfg.decoder.sampler,
            cfg.decoder.sample_steps,
            cfg.seed ^ (0xECA0 + clip_index as u64),
        )?;
        let rel = format!("clip_{clip_index:04}.video.cbtf");
        synthdata::cbtf::write_f32(&video, &dir.join(&rel))?;
        if png {
            export_png_frames(&video, &dir.join(format!("clip_{clip_index:04}_frames")))?;
        }
        written.push(serde_json::json!({"clip_index": clip_index, "file": rel}));
    }
    std::fs::write(
        dir.join("done.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "experiment_hash": cfg.hash(),
            "clips": written,
        }))
        .expect("serializes"),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn export_png_frames(video: &Tensor<f32>, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let shape = video.shape();
    let (frames, h, w) = (shape[0], shape[1], shape[2]);
    for f in 0..frames {
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let base = ((f * h + y) * w + x) * 3;
                let px = [
                    (video.data()[base] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (video.data()[base + 1] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (video.data()[base + 2] * 255.0).round().clamp(0.0, 255.0) as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let path = dir.join(format!("frame_{f:02}.png"));
        img.save(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Semantic clip embeddings through the trained aggregation path (stub
/// visual features → φ), for reconstructed and ground-truth videos.
pub fn semantic_video_embeddings(
    encoder: &EncoderModel,
    videos: &[Tensor<f32>],
) -> Result<Tensor<f32>> {
    use numcore::graph::Graph;
    let e = encoder.config.embed_dim;
    let mut out = Vec::with_capacity(videos.len() * e);
    for chunk in videos.chunks(64) {
        let g = Graph::new();
        let bound = encoder.store.bind(&g);
        let feats: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|v| mfe::frame_features(v))
            .collect::<std::result::Result<_, _>>()?;
        let stacked = Tensor::stack(&feats).map_err(|er| CliError::Numeric(er.to_string()))?;
        let fv = g.constant(stacked);
        let emb = mfe::visual_embed(&g, &bound, fv)?;
        let c_v = g.value(mfe::aggregate_video(&g, &bound, emb, encoder.config.heads)?);
        out.extend_from_slice(c_v.data());
    }
    Tensor::from_vec(&[videos.len(), e], out).map_err(|er| CliError::Numeric(er.to_string()))
}

pub fn stage_evaluate(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let report_path = cfg.stage_dir("eval").join("report.json");
    if report_path.exists() {
        let text = std::fs::read_to_string(&report_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())));
    }
    let dataset = load_encoder_dataset(&cfg.dataset_dir())?;
    let manifest = DatasetManifest::load(&cfg.dataset_dir())?;
    let encoder = load_encoder(cfg)?;
    let indices = eval_indices(cfg, &dataset);
    let recon = recon_dir(cfg);

    let mut pairs = Vec::with_capacity(indices.len());
    for &i in &indices {
        let clip_index = dataset.examples[i].clip_index;
        let recon_video =
            synthdata::cbtf::read_f32(&recon.join(format!("clip_{clip_index:04}.video.cbtf")))?;
        let truth = load_clip_video(cfg, &manifest, clip_index)?;
        pairs.push(ClipPair {
            clip_index,
            recon: recon_video,
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
        trials: cfg.eval.trials,
    })?;

    let dir = cfg.stage_dir("eval");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    std::fs::write(&report_path, report.to_json())
        .map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?;
    let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(&cfg.preset));
    std::fs::write(dir.join("report.csv"), csv)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(report)
}

/// The full pipeline; returns the final metric report.
pub fn run_pipeline(cfg: &ExperimentConfig, png: bool) -> Result<MetricReport> {
    stage_synth(cfg)?;
    stage_preprocess(cfg)?;
    stage_train_encoder(cfg)?;
    stage_train_decoder(cfg)?;
    stage_reconstruct(cfg, png)?;
    stage_evaluate(cfg)
}
