// step-time probe (not an assertion test; prints timings)
use mfe::{train_encoder, EncoderConfig, EncoderTrainConfig};
use preproc::PreprocConfig;
use synthdata::SynthConfig;

#[test]
#[ignore]
fn step_timing() {
    let cfg = SynthConfig { n_episodes: 2, clips_per_episode: 16, ..SynthConfig::desk(1) };
    let dir = tempfile::tempdir().unwrap();
    synthdata::generate_dataset(&cfg, dir.path(), (1, 1)).unwrap();
    preproc::preprocess_dataset(dir.path(), &PreprocConfig::default()).unwrap();
    let ds = mfe::data::load_encoder_dataset(dir.path()).unwrap();
    println!("examples: {}", ds.examples.len());
    let enc = EncoderConfig::desk(&cfg);
    let tc = EncoderTrainConfig { epochs: 2, batch_size: 16, ..Default::default() };
    let t0 = std::time::Instant::now();
    let out = train_encoder(&ds, enc, &tc).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "total {dt:.1}s for {} epochs, log: {:?}",
        out.log.len(),
        out.log.iter().map(|r| (r.mean_loss, r.heldout_2way)).collect::<Vec<_>>()
    );
}
