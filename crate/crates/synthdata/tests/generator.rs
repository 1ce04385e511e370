//! Generator contracts: determinism, planted SNR, split arithmetic,
//! manifest integrity and factor complementarity.

use synthdata::config::SynthConfig;
use synthdata::generate::{generate_dataset, synth_run};
use synthdata::manifest::{DatasetManifest, Split};
use synthdata::probe::{complementarity_probe, correlation};

fn tiny_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_episodes: 2,
        clips_per_episode: 6,
        voxels: 32,
        frame_size: 16,
        frames_per_clip: 4,
        ..SynthConfig::desk(seed)
    }
}

#[test]
fn same_seed_bitwise_identical_dataset() {
    let cfg = tiny_config(11);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, dir_a.path(), (1, 1)).unwrap();
    generate_dataset(&cfg, dir_b.path(), (1, 1)).unwrap();

    let mut paths: Vec<_> = walk(dir_a.path());
    paths.sort();
    assert!(!paths.is_empty());
    for rel in paths {
        let a = std::fs::read(dir_a.path().join(&rel)).unwrap();
        let b = std::fs::read(dir_b.path().join(&rel)).unwrap();
        assert_eq!(a, b, "file {rel} differs between identical seeds");
    }
}

fn walk(root: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out
}

#[test]
fn planted_fmri_snr_within_band() {
    // Monte Carlo estimate of per-voxel SNR against the generator's own
    // clean signal; long run keeps the variance estimator tight.
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 128,
        voxels: 1000,
        frame_size: 8,
        frames_per_clip: 2,
        snr_db: 20.0,
        ..SynthConfig::desk(21)
    };
    let run = synth_run(&cfg, 0);
    let frames = cfg.fmri_frames_per_run();
    let v = cfg.voxels;
    let mut worst: f64 = 0.0;
    for vox in 0..v {
        let mut sig = Vec::with_capacity(frames);
        let mut noise = Vec::with_capacity(frames);
        for f in 0..frames {
            let clean = run.fmri_clean.data()[f * v + vox] as f64;
            let noisy = run.fmri.data()[f * v + vox] as f64;
            sig.push(clean);
            noise.push(noisy - clean);
        }
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        let snr_db = 10.0 * (var(&sig) / var(&noise)).log10();
        worst = worst.max((snr_db - cfg.snr_db).abs());
        assert!(
            (snr_db - cfg.snr_db).abs() <= 1.5,
            "voxel {vox}: measured {snr_db:.2} dB"
        );
    }
    assert!(worst > 0.0, "estimates vary, as expected of a Monte Carlo check");
}

#[test]
fn split_18_2_gives_4860_540() {
    // Episode-level split arithmetic at full scale, no data generation.
    let cfg = SynthConfig::fullscale(0);
    let mut manifest = manifest_skeleton(&cfg);
    manifest.split_train_test(18, 2).unwrap();
    let train = manifest.clips_in_split(&Split::Train).len();
    let test = manifest.clips_in_split(&Split::Test).len();
    assert_eq!(train, 4860);
    assert_eq!(test, 540);
    assert_eq!(train + test, cfg.total_clips());
}

#[test]
fn split_is_partition_and_proportional() {
    let cfg = SynthConfig {
        n_episodes: 10,
        ..tiny_config(3)
    };
    let mut manifest = manifest_skeleton(&cfg);
    manifest.split_train_test(9, 1).unwrap();
    let train = manifest.clips_in_split(&Split::Train).len();
    let test = manifest.clips_in_split(&Split::Test).len();
    assert_eq!(train, 9 * cfg.clips_per_episode);
    assert_eq!(test, cfg.clips_per_episode);
    // no test episode contributes a train clip
    for clip in &manifest.clips {
        let expect = if clip.episode < 9 { Split::Train } else { Split::Test };
        assert_eq!(clip.split, expect);
    }
    // bad request rejected
    assert!(manifest.split_train_test(9, 2).is_err());
}

/// Builds a manifest with clip records only (no files), for split tests.
fn manifest_skeleton(cfg: &SynthConfig) -> DatasetManifest {
    use synthdata::manifest::{ClipRecord, FileRef, MANIFEST_VERSION};
    let null_ref = FileRef {
        path: String::new(),
        shape: vec![],
        payload_offset: 0,
        bytes: 0,
        checksum: String::new(),
    };
    let clips = (0..cfg.total_clips())
        .map(|i| ClipRecord {
            clip_index: i,
            episode: i / cfg.clips_per_episode,
            clip_in_episode: i % cfg.clips_per_episode,
            class_id: 0,
            caption: String::new(),
            seed: 0,
            split: Split::Unassigned,
            video: null_ref.clone(),
            fmri: None,
            eeg: None,
        })
        .collect();
    DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        config_hash: String::new(),
        mixing_a_f: null_ref.clone(),
        mixing_b_e: null_ref,
        runs: vec![],
        clips,
        preprocessing: None,
    }
}

#[test]
fn manifest_roundtrip_and_integrity() {
    let cfg = tiny_config(5);
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&cfg, dir.path(), (1, 1)).unwrap();
    manifest.verify(dir.path()).unwrap();

    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.clips.len(), cfg.total_clips());
    loaded.verify(dir.path()).unwrap();

    // flip one payload byte -> checksum failure
    let victim = dir.path().join(&loaded.runs[0].fmri.path);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    std::fs::write(&victim, bytes).unwrap();
    assert!(loaded.verify(dir.path()).is_err());
}

#[test]
fn complementarity_planted_by_construction() {
    let cfg = SynthConfig {
        n_episodes: 4,
        ..SynthConfig::complementary(7)
    };
    let runs: Vec<_> = (0..cfg.n_episodes).map(|e| synth_run(&cfg, e)).collect();
    let report = complementarity_probe(&cfg, &runs, 10.0);
    assert!(
        report.fmri_to_spatial_r2 > 0.5,
        "fMRI should recover appearance: {report:?}"
    );
    assert!(
        report.eeg_to_temporal_r2 > 0.5,
        "EEG should recover motion: {report:?}"
    );
    assert!(
        report.fmri_to_temporal_r2 < 0.1,
        "fMRI must not see motion: {report:?}"
    );
    assert!(
        report.eeg_to_spatial_r2 < 0.1,
        "EEG must not see appearance: {report:?}"
    );
}

#[test]
fn tr_grid_and_beats_recorded() {
    let cfg = tiny_config(9);
    let run = synth_run(&cfg, 0);
    assert_eq!(run.tr_events.len(), cfg.fmri_frames_per_run());
    assert!(run.ecg_beats.len() >= 10, "needs enough beats for QRS work");
    for w in run.ecg_beats.windows(2) {
        assert!(w[1] > w[0]);
    }
    // beats land on R-peak maxima of the trace
    let ecg = run.ecg.data();
    for &b in run.ecg_beats.iter() {
        let lo = b.saturating_sub(3);
        let hi = (b + 3).min(ecg.len() - 1);
        let local_max = (lo..=hi).map(|i| ecg[i]).fold(f32::MIN, f32::max);
        assert!(ecg[b] >= local_max - 1e-4);
    }
}

#[test]
fn video_reflects_both_factors() {
    let cfg = tiny_config(13);
    let latents = synthdata::clip_latents(&cfg, 0);
    let a = synthdata::render_clip_video(&cfg, &latents[0]);
    let b = synthdata::render_clip_video(&cfg, &latents[1]);
    assert_eq!(a.shape(), &[cfg.frames_per_clip, 16, 16, 3]);
    let diff: f32 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(diff > 1.0, "different latents must render differently");
    // motion: frames within one clip differ
    let f0 = a.rows(0, 1).unwrap();
    let f1 = a.rows(cfg.frames_per_clip - 1, 1).unwrap();
    let motion: f32 = f0
        .data()
        .iter()
        .zip(f1.data().iter())
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(motion > 0.5, "block should move across frames");
}

#[test]
fn clean_eeg_correlates_with_itself_through_noise() {
    // sanity: at 20 dB SNR, noisy EEG still correlates strongly with clean
    let cfg = tiny_config(17);
    let run = synth_run(&cfg, 0);
    let clean: Vec<f64> = run.eeg_clean.data().iter().map(|&x| x as f64).collect();
    let noisy: Vec<f64> = run.eeg.data().iter().map(|&x| x as f64).collect();
    let r = correlation(&clean, &noisy);
    assert!(r > 0.5, "corr {r}");
}
