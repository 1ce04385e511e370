//! Chain-level oracles against the generator's planted ground truth.

use numcore::Tensor;
use preproc::{
    epoch_align, fastica_cleanup, process_run, remove_cardiac_artifact, zscore_with_lag,
    FilterCascade, PreprocConfig,
};
use synthdata::config::SynthConfig;
use synthdata::generate::synth_run;
use synthdata::probe::correlation;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn rows_f64(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let (c, n) = (t.shape()[0], t.shape()[1]);
    (0..c)
        .map(|i| t.data()[i * n..(i + 1) * n].iter().map(|&x| x as f64).collect())
        .collect()
}

#[test]
fn qrs_template_subtraction_halves_artifact_power() {
    // strong cardiac coupling, negligible noise, no powerline: the residual
    // against clean EEG is almost pure beat-locked artifact
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 16,
        snr_db: 60.0,
        powerline_amp: 0.0,
        ecg_coupling: 1.0,
        ..SynthConfig::desk(31)
    };
    let run = synth_run(&cfg, 0);
    let eeg = rows_f64(&run.eeg);
    let clean = rows_f64(&run.eeg_clean);
    let ecg: Vec<f64> = run.ecg.data().iter().map(|&x| x as f64).collect();

    let out = remove_cardiac_artifact(&eeg, &ecg, cfg.eeg_rate_hz).unwrap();
    assert!(out.applied);

    let mut before = 0.0;
    let mut after = 0.0;
    let mut corr_acc = 0.0;
    for c in 0..eeg.len() {
        let art_before: Vec<f64> = eeg[c].iter().zip(&clean[c]).map(|(a, b)| a - b).collect();
        let art_after: Vec<f64> = out.eeg[c].iter().zip(&clean[c]).map(|(a, b)| a - b).collect();
        before += power(&art_before);
        after += power(&art_after);
        corr_acc += correlation(&out.eeg[c], &clean[c]);
    }
    let reduction = 1.0 - after / before;
    assert!(reduction >= 0.5, "artifact power reduced by {:.1}%", reduction * 100.0);
    let mean_corr = corr_acc / eeg.len() as f64;
    assert!(mean_corr >= 0.95, "neural correlation {mean_corr:.3}");
}

#[test]
fn detected_beats_match_generator_grid() {
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 16,
        ..SynthConfig::desk(37)
    };
    let run = synth_run(&cfg, 0);
    let ecg: Vec<f64> = run.ecg.data().iter().map(|&x| x as f64).collect();
    let peaks = preproc::detect_r_peaks(&ecg, cfg.eeg_rate_hz).unwrap();
    let diff = (peaks.len() as isize - run.ecg_beats.len() as isize).abs();
    assert!(diff <= 1, "found {} beats, planted {}", peaks.len(), run.ecg_beats.len());
}

#[test]
fn chain_is_near_identity_without_contamination() {
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 12,
        powerline_amp: 0.0,
        ecg_coupling: 0.0,
        ..SynthConfig::desk(41)
    };
    let run = synth_run(&cfg, 0);
    let eeg = rows_f64(&run.eeg);
    let ecg: Vec<f64> = run.ecg.data().iter().map(|&x| x as f64).collect();

    let bp = FilterCascade::butter_bandpass(0.1, 30.0, cfg.eeg_rate_hz).unwrap();
    let notch = FilterCascade::notch(50.0, cfg.eeg_rate_hz, 30.0).unwrap();
    let filtered: Vec<Vec<f64>> = eeg
        .iter()
        .map(|row| notch.filtfilt(&bp.filtfilt(row).unwrap()).unwrap())
        .collect();
    let qrs = remove_cardiac_artifact(&filtered, &ecg, cfg.eeg_rate_hz).unwrap();
    let ica = fastica_cleanup(&qrs.eeg, &ecg, 20, 0.8, 7).unwrap();
    assert!(ica.removed.is_empty(), "nothing should correlate with ECG");

    let mut num = 0.0;
    let mut den = 0.0;
    for (orig, out) in eeg.iter().zip(&ica.cleaned) {
        for (a, b) in orig.iter().zip(out.iter()) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.05, "relative change {rel:.4}");
}

#[test]
fn planted_neural_signal_survives_full_chain() {
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 16,
        ..SynthConfig::desk(43)
    };
    let run = synth_run(&cfg, 0);
    let pp = PreprocConfig::default();
    let processed = process_run(
        &pp,
        0,
        &run.fmri,
        &run.eeg,
        &run.ecg,
        &run.tr_events,
        cfg.eeg_rate_hz,
        cfg.eeg_samples,
    )
    .unwrap();
    assert!(!processed.samples.is_empty());
    assert_eq!(processed.log.clips_dropped, 1, "trailing lagged clip drops");

    // correlate processed EEG epochs against the clean neural ground truth
    let n = cfg.eeg_samples_per_run();
    let mut got = Vec::new();
    let mut want = Vec::new();
    for sample in &processed.samples {
        let start = run.tr_events[sample.clip_index * 5];
        for c in 0..cfg.eeg_channels {
            for s in 0..cfg.eeg_samples {
                got.push(sample.eeg.data()[c * cfg.eeg_samples + s] as f64);
                want.push(run.eeg_clean.data()[c * n + start + s] as f64);
            }
        }
    }
    let r = correlation(&got, &want);
    assert!(r >= 0.9, "end-to-end neural correlation {r:.3}");
}

#[test]
fn eeg_slices_start_on_tr_grid() {
    // plant a one-sample spike at each clip's TR onset on channel 0 and
    // confirm it lands at the first sample of each epoch window
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 8,
        ..SynthConfig::desk(47)
    };
    let frames = cfg.fmri_frames_per_run();
    let mut rng = numcore::RngStream::new(1, 0);
    let fmri = Tensor::from_fn(&[frames, cfg.voxels], |_| rng.normal_f64() as f32);
    let z = zscore_with_lag(&fmri, 4.0).unwrap();

    let n = cfg.eeg_samples_per_run();
    let tr = cfg.tr_event_grid();
    let mut ch0 = vec![0.0f64; n];
    for k in 0..cfg.clips_per_episode {
        ch0[tr[k * 5]] = 7.0;
    }
    let eeg = vec![ch0, vec![0.0; n]];
    let out = epoch_align(&z, &eeg, &tr, cfg.eeg_samples, 0).unwrap();
    for s in &out.samples {
        assert_eq!(s.eeg.data()[0], 7.0, "clip {} misaligned", s.clip_index);
        assert_eq!(s.eeg.shape(), &[2, cfg.eeg_samples]);
    }
}

#[test]
fn channel_permutation_consistency() {
    // permuting EEG channels permutes epoched channels identically
    let cfg = SynthConfig {
        n_episodes: 1,
        clips_per_episode: 8,
        eeg_channels: 8,
        ..SynthConfig::desk(53)
    };
    let frames = cfg.fmri_frames_per_run();
    let mut rng = numcore::RngStream::new(2, 0);
    let fmri = Tensor::from_fn(&[frames, cfg.voxels], |_| rng.normal_f64() as f32);
    let z = zscore_with_lag(&fmri, 4.0).unwrap();
    let tr = cfg.tr_event_grid();
    let n = cfg.eeg_samples_per_run();
    let eeg: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..n).map(|_| rng.normal_f64()).collect())
        .collect();

    let base = epoch_align(&z, &eeg, &tr, cfg.eeg_samples, 0).unwrap();
    let perm: Vec<usize> = vec![3, 1, 7, 0, 5, 2, 6, 4];
    let eeg_perm: Vec<Vec<f64>> = perm.iter().map(|&i| eeg[i].clone()).collect();
    let permuted = epoch_align(&z, &eeg_perm, &tr, cfg.eeg_samples, 0).unwrap();

    for (a, b) in base.samples.iter().zip(permuted.samples.iter()) {
        for (new_c, &old_c) in perm.iter().enumerate() {
            let w = cfg.eeg_samples;
            assert_eq!(
                &b.eeg.data()[new_c * w..(new_c + 1) * w],
                &a.eeg.data()[old_c * w..(old_c + 1) * w]
            );
        }
    }
}

#[test]
fn dataset_level_preprocessing_updates_manifest() {
    let cfg = SynthConfig {
        n_episodes: 2,
        clips_per_episode: 6,
        voxels: 32,
        frame_size: 16,
        frames_per_clip: 4,
        ..SynthConfig::desk(59)
    };
    let dir = tempfile::tempdir().unwrap();
    synthdata::generate_dataset(&cfg, dir.path(), (1, 1)).unwrap();
    let logs = preproc::preprocess_dataset(dir.path(), &PreprocConfig::default()).unwrap();
    assert_eq!(logs.len(), 2);
    for log in &logs {
        assert_eq!(log.clips_epoched, 5);
        assert_eq!(log.clips_dropped, 1);
    }

    let manifest = synthdata::DatasetManifest::load(dir.path()).unwrap();
    let prov = manifest.preprocessing.as_ref().expect("provenance recorded");
    assert_eq!(prov.lag_frames, 5);
    assert_eq!(prov.dropped_clips, 2);
    manifest.verify(dir.path()).unwrap();

    // epoched clips carry tensors of the advertised shapes
    let epoched: Vec<_> = manifest.clips.iter().filter(|c| c.fmri.is_some()).collect();
    assert_eq!(epoched.len(), 10);
    let first = epoched[0];
    let fmri = synthdata::read_f32(&dir.path().join(&first.fmri.as_ref().unwrap().path)).unwrap();
    assert_eq!(fmri.shape(), &[5, cfg.voxels]);
    let eeg = synthdata::read_f32(&dir.path().join(&first.eeg.as_ref().unwrap().path)).unwrap();
    assert_eq!(eeg.shape(), &[cfg.eeg_channels, cfg.eeg_samples]);
}
