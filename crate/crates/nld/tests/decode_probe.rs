// end-to-end probe: encoder -> z_b -> decoder training -> conditional vs
// shuffled-condition reconstruction PSNR (prints measurements)
use mfe::{train_encoder, EncoderConfig, EncoderTrainConfig};
use nld::{
    encode_training_latent, make_schedule, reconstruct_video, train_decoder, DecoderTrainConfig,
    DitConfig, DitModel, LatentCodec, Sampler,
};
use numcore::Tensor;
use preproc::PreprocConfig;
use synthdata::manifest::Split;
use synthdata::SynthConfig;


#[test]
#[ignore]
fn conditional_decoding_probe() {
    let cfg = SynthConfig::desk(1234);
    let dir = std::path::PathBuf::from("/tmp/desk_probe");
    if !dir.join("manifest.json").exists() {
        synthdata::generate_dataset(&cfg, &dir, (16, 4)).unwrap();
        preproc::preprocess_dataset(&dir, &PreprocConfig::default()).unwrap();
    }
    let ds = mfe::data::load_encoder_dataset(&dir).unwrap();

    let ckpt_dir = std::path::PathBuf::from("/tmp/desk_probe_encoder");
    let encoder = if ckpt_dir.join("header.json").exists() {
        let (_, store) = mfe::checkpoint::load_checkpoint(&ckpt_dir).unwrap();
        mfe::EncoderModel::from_store(EncoderConfig::desk(&cfg), store).unwrap()
    } else {
        let t0 = std::time::Instant::now();
        let enc_out = train_encoder(&ds, EncoderConfig::desk(&cfg), &EncoderTrainConfig::default()).unwrap();
        println!("encoder: {:.0}s, last 2way {:.3}", t0.elapsed().as_secs_f64(),
            enc_out.log.last().unwrap().heldout_2way);
        mfe::checkpoint::save_checkpoint(&ckpt_dir, "encoder", &serde_json::json!({"probe": 1}), &enc_out.model.store).unwrap();
        enc_out.model
    };

    // latents + conditions for the training split
    let manifest = synthdata::DatasetManifest::load(&dir).unwrap();
    let codec = LatentCodec::new(cfg.frames_per_clip, cfg.frame_size, cfg.frame_size, 16, 99).unwrap();
    let train_idx = ds.split_indices(Split::Train);
    let test_idx = ds.split_indices(Split::Test);

    let load_video = |clip_index: usize| -> Tensor<f32> {
        let rec = manifest.clips.iter().find(|c| c.clip_index == clip_index).unwrap();
        synthdata::read_f32(&dir.join(&rec.video.path)).unwrap()
    };

    let t1 = std::time::Instant::now();
    let zb_train = mfe::compute_zb(&encoder, &ds, &train_idx).unwrap();
    let x0_train: Vec<Tensor<f32>> = train_idx
        .iter()
        .map(|&i| encode_training_latent(&codec, &load_video(ds.examples[i].clip_index)).unwrap())
        .collect();
    println!("latents+zb: {:.0}s", t1.elapsed().as_secs_f64());

    let dit_cfg = DitConfig::desk(codec.tokens(), codec.patch_dim(),
        encoder.config.token_count, encoder.config.hidden_dim);
    let schedule = make_schedule(dit_cfg.t_steps, 1e-4, 0.02).unwrap();
    let model = DitModel::new(dit_cfg).unwrap();
    let t2 = std::time::Instant::now();
    let out = train_decoder(model, &x0_train, &zb_train, &schedule, &DecoderTrainConfig::default()).unwrap();
    let warm: Vec<f64> = out.log.iter().filter(|r| r.phase == "warmup").map(|r| r.loss).collect();
    let cond: Vec<f64> = out.log.iter().filter(|r| r.phase == "conditional").map(|r| r.loss).collect();
    println!(
        "decoder: {:.0}s warmup {:.3}->{:.3} cond {:.3}->{:.3}",
        t2.elapsed().as_secs_f64(),
        warm.first().unwrap(), warm.last().unwrap(),
        cond.first().unwrap(), cond.last().unwrap()
    );
    let lead: f64 = cond[..100].iter().sum::<f64>() / 100.0;
    let trail: f64 = cond[cond.len() - 100..].iter().sum::<f64>() / 100.0;
    println!("cond leading100 {lead:.4} trailing100 {trail:.4}");

    // conditional vs shuffled-condition PSNR on the test split
    let t3 = std::time::Instant::now();
    let zb_test = mfe::compute_zb(&encoder, &ds, &test_idx).unwrap();
    let n = test_idx.len();
    let mut cond_psnr = 0.0;
    let mut shuf_psnr = 0.0;
    for (k, &i) in test_idx.iter().enumerate() {
        let truth = load_video(ds.examples[i].clip_index);
        let recon = reconstruct_video(&out.model, &codec, &schedule, &zb_test[k], Sampler::Ddim, 50, 1000 + k as u64).unwrap();
        cond_psnr += evalkit::psnr(&recon, &truth).unwrap();
        let shuffled = &zb_test[(k + n / 2) % n];
        let recon_s = reconstruct_video(&out.model, &codec, &schedule, shuffled, Sampler::Ddim, 50, 1000 + k as u64).unwrap();
        shuf_psnr += evalkit::psnr(&recon_s, &truth).unwrap();
    }
    cond_psnr /= n as f64;
    shuf_psnr /= n as f64;
    println!(
        "sampling: {:.0}s over {n} clips; cond PSNR {cond_psnr:.3} dB, shuffled {shuf_psnr:.3} dB, gap {:.3} dB",
        t3.elapsed().as_secs_f64(),
        cond_psnr - shuf_psnr
    );
}
