//! Deterministic synthetic paired data: stimulus videos with planted
//! appearance/motion factors, fMRI-like runs driven by the appearance factor
//! through a lagged hemodynamic-style kernel, and EEG-like runs driven by the
//! motion factor through an oscillatory basis, plus powerline and
//! cardiac-artifact contamination for the preprocessing chain to remove.
//!
//! Everything is a pure function of [`SynthConfig`]; the same seed yields
//! bitwise-identical datasets.

use std::path::Path;

use numcore::rng::RngStream;
use numcore::Tensor;

use crate::config::{SynthConfig, FRAMES_PER_CLIP_FMRI};
use crate::manifest::{
    config_hash, ClipRecord, DatasetManifest, FileRef, RunRecord, Split, MANIFEST_VERSION,
};
use crate::{cbtf, Error, Result};

// Stream labels hung off the master seed; any fixed distinct set works.
const STREAM_MIXING: u64 = 1;

fn tensor_f32(shape: &[usize], data: Vec<f64>) -> Tensor<f32> {
    Tensor::from_vec(shape, data.into_iter().map(|x| x as f32).collect())
        .expect("synthesized values finite")
}

const STREAM_PROTOTYPES: u64 = 2;
const STREAM_CLIPS: u64 = 3;
const STREAM_FMRI_NOISE: u64 = 4;
const STREAM_EEG_NOISE: u64 = 5;
const STREAM_ECG: u64 = 6;

/// Per-clip generative state.
#[derive(Clone, Debug)]
pub struct StimulusLatent {
    /// Appearance factor (drives fMRI and frame appearance).
    pub spatial: Vec<f64>,
    /// Motion factor (drives EEG and frame motion).
    pub temporal: Vec<f64>,
    pub class_id: usize,
    pub caption: String,
}

/// One fully synthesized recording session (one episode).
pub struct RunData {
    pub episode: usize,
    /// frames × voxels, noisy.
    pub fmri: Tensor<f32>,
    /// frames × voxels, noise-free (test oracle).
    pub fmri_clean: Tensor<f32>,
    /// channels × samples with powerline + cardiac artifacts.
    pub eeg: Tensor<f32>,
    /// channels × samples, neural content only (test oracle).
    pub eeg_clean: Tensor<f32>,
    /// 1 × samples electrocardiogram.
    pub ecg: Tensor<f32>,
    /// R-peak sample indices planted by the generator.
    pub ecg_beats: Vec<usize>,
    /// TR onset sample indices on the EEG clock.
    pub tr_events: Vec<usize>,
    pub latents: Vec<StimulusLatent>,
}

const COLOR_WORDS: [&str; 8] = [
    "crimson", "amber", "lime", "teal", "azure", "violet", "coral", "silver",
];
const MOTION_WORDS: [&str; 8] = [
    "drifting left",
    "drifting right",
    "rising",
    "sinking",
    "sweeping diagonally",
    "circling slowly",
    "swaying",
    "gliding in waves",
];

/// Abramowitz–Stegun 7.1.26 rational approximation of erf.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn ncdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn class_grid(n_classes: usize) -> (usize, usize) {
    // largest divisor pair (cs, ct) with cs ≤ ct
    let mut cs = (n_classes as f64).sqrt() as usize;
    while cs > 1 && n_classes % cs != 0 {
        cs -= 1;
    }
    (cs, n_classes / cs)
}

fn bucket(x: f64, n: usize) -> usize {
    ((ncdf(x) * n as f64) as usize).min(n - 1)
}

/// Prototype codebooks for factor collisions (empty when disabled).
fn prototypes(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = RngStream::new(cfg.seed, STREAM_PROTOTYPES);
    let spatial = (0..cfg.spatial_prototypes)
        .map(|_| rng.normal_vec(cfg.spatial_dim))
        .collect();
    let temporal = (0..cfg.temporal_prototypes)
        .map(|_| rng.normal_vec(cfg.temporal_dim))
        .collect();
    (spatial, temporal)
}

/// Latents for every clip of an episode (pure function of config).
pub fn clip_latents(cfg: &SynthConfig, episode: usize) -> Vec<StimulusLatent> {
    let (proto_s, proto_t) = prototypes(cfg);
    let base = RngStream::new(cfg.seed, STREAM_CLIPS);
    let (cs, ct) = class_grid(cfg.n_classes);
    (0..cfg.clips_per_episode)
        .map(|k| {
            let global = episode * cfg.clips_per_episode + k;
            let mut rng = base.derive(global as u64);
            let spatial = draw_factor(&mut rng, cfg.spatial_dim, &proto_s, cfg.prototype_jitter);
            let temporal = draw_factor(&mut rng, cfg.temporal_dim, &proto_t, cfg.prototype_jitter);
            let qs = bucket(spatial[0], cs);
            let qt = bucket(temporal[0], ct);
            let class_id = qs * ct + qt;
            let caption = format!(
                "a {} block {}",
                COLOR_WORDS[qs % COLOR_WORDS.len()],
                MOTION_WORDS[qt % MOTION_WORDS.len()]
            );
            StimulusLatent {
                spatial,
                temporal,
                class_id,
                caption,
            }
        })
        .collect()
}

fn draw_factor(rng: &mut RngStream, dim: usize, protos: &[Vec<f64>], jitter: f64) -> Vec<f64> {
    if protos.is_empty() {
        rng.normal_vec(dim)
    } else {
        let idx = rng.below(protos.len() as u64) as usize;
        protos[idx]
            .iter()
            .map(|&p| p + jitter * rng.normal_f64())
            .collect()
    }
}

/// Mixing matrices, drawn once per dataset: `a_f` maps the appearance factor
/// to voxel space, `b_e` maps the motion factor to channel gains.
pub fn mixing_matrices(cfg: &SynthConfig) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = RngStream::new(cfg.seed, STREAM_MIXING);
    let scale_s = 1.0 / (cfg.spatial_dim as f64).sqrt();
    let a_f = Tensor::from_fn(&[cfg.voxels, cfg.spatial_dim], |_| {
        (rng.normal_f64() * scale_s) as f32
    });
    let scale_t = 1.0 / (cfg.temporal_dim as f64).sqrt();
    let b_e = Tensor::from_fn(&[cfg.eeg_channels, cfg.temporal_dim], |_| {
        (rng.normal_f64() * scale_t) as f32
    });
    (a_f, b_e)
}

/// Oscillatory basis for the EEG drive: one frequency/phase per temporal
/// factor dimension, all inside the 0.1–30 Hz analysis band.
pub fn eeg_basis(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngStream::new(cfg.seed, STREAM_MIXING).derive(77);
    let freqs: Vec<f64> = (0..cfg.temporal_dim).map(|j| 3.0 + 2.5 * j as f64).collect();
    let phases: Vec<f64> = (0..cfg.temporal_dim)
        .map(|_| rng.uniform_f64() * std::f64::consts::TAU)
        .collect();
    (freqs, phases)
}

/// Truncated gamma-shaped kernel over fMRI frames, mass front-loaded so each
/// clip's response stays mostly inside its lagged 5-frame window.
pub fn hemodynamic_kernel() -> [f64; FRAMES_PER_CLIP_FMRI] {
    let mut k = [0.0; FRAMES_PER_CLIP_FMRI];
    let (shape, scale) = (1.3, 0.9);
    for (tau, slot) in k.iter_mut().enumerate() {
        let t = tau as f64 + 0.5;
        *slot = t.powf(shape - 1.0) * (-t / scale).exp();
    }
    let sum: f64 = k.iter().sum();
    for slot in k.iter_mut() {
        *slot /= sum;
    }
    k
}

/// BOLD lag applied by the generator, in frames.
pub fn lag_frames(lag_seconds: f64) -> usize {
    (lag_seconds * crate::config::FMRI_RATE_HZ).round() as usize
}

/// Synthesizes one full episode recording.
pub fn synth_run(cfg: &SynthConfig, episode: usize) -> RunData {
    let latents = clip_latents(cfg, episode);
    let (a_f, b_e) = mixing_matrices(cfg);
    let tr_events = cfg.tr_event_grid();

    let (fmri_clean, fmri) = synth_fmri(cfg, episode, &latents, &a_f);
    let (ecg, ecg_beats) = synth_ecg(cfg, episode);
    let (eeg_clean, eeg) = synth_eeg(cfg, episode, &latents, &b_e, &ecg_beats);

    RunData {
        episode,
        fmri,
        fmri_clean,
        eeg,
        eeg_clean,
        ecg,
        ecg_beats,
        tr_events,
        latents,
    }
}

fn synth_fmri(
    cfg: &SynthConfig,
    episode: usize,
    latents: &[StimulusLatent],
    a_f: &Tensor<f32>,
) -> (Tensor<f32>, Tensor<f32>) {
    let frames = cfg.fmri_frames_per_run();
    let v = cfg.voxels;
    let lag = lag_frames(4.0);
    let kernel = hemodynamic_kernel();

    // drive u[f][vox] = A_f · spatial(clip at stimulus frame f)
    let mut drive = vec![0.0f64; frames * v];
    for f in 0..frames {
        let clip = f / FRAMES_PER_CLIP_FMRI;
        let s = &latents[clip].spatial;
        for vox in 0..v {
            let mut acc = 0.0;
            for (j, &sj) in s.iter().enumerate() {
                acc += a_f.data()[vox * cfg.spatial_dim + j] as f64 * sj;
            }
            drive[f * v + vox] = acc;
        }
    }

    // lagged convolution
    let mut clean = vec![0.0f64; frames * v];
    for f in 0..frames {
        for (tau, &ktau) in kernel.iter().enumerate() {
            let Some(src) = f.checked_sub(lag + tau) else { continue };
            for vox in 0..v {
                clean[f * v + vox] += ktau * drive[src * v + vox];
            }
        }
    }

    // per-voxel noise scaled to snr_db against the clean signal
    let mut rng = RngStream::new(cfg.seed, STREAM_FMRI_NOISE).derive(episode as u64);
    let noise_gain = 10f64.powf(-cfg.snr_db / 20.0);
    let mut noisy = clean.clone();
    for vox in 0..v {
        let mut mean = 0.0;
        for f in 0..frames {
            mean += clean[f * v + vox];
        }
        mean /= frames as f64;
        let mut var = 0.0;
        for f in 0..frames {
            let d = clean[f * v + vox] - mean;
            var += d * d;
        }
        var /= frames as f64;
        let sigma = var.sqrt().max(1e-6) * noise_gain;
        for f in 0..frames {
            noisy[f * v + vox] += sigma * rng.normal_f64();
        }
    }

    let to_f32 = |d: Vec<f64>| tensor_f32(&[frames, v], d);
    (to_f32(clean), to_f32(noisy))
}

fn synth_ecg(cfg: &SynthConfig, episode: usize) -> (Tensor<f32>, Vec<usize>) {
    let n = cfg.eeg_samples_per_run();
    let fs = cfg.eeg_rate_hz;
    let mut rng = RngStream::new(cfg.seed, STREAM_ECG).derive(episode as u64);

    // beat times: ~66 bpm with mild beat-to-beat jitter
    let mut beats = Vec::new();
    let mut t = 0.35 + 0.2 * rng.uniform_f64();
    while (t * fs) < (n as f64 - fs * 0.3) {
        beats.push((t * fs).round() as usize);
        let interval = (60.0 / 66.0) * (1.0 + 0.03 * rng.normal_f64().clamp(-2.0, 2.0));
        t += interval;
    }

    let mut trace = vec![0.0f64; n];
    for &b in &beats {
        stamp_ecg_complex(&mut trace, b, fs);
    }
    // light sensor noise on the ECG lead
    for x in trace.iter_mut() {
        *x += 0.01 * rng.normal_f64();
    }
    (tensor_f32(&[1, n], trace), beats)
}

/// QRS-like biphasic spike plus a low T-wave bump centered on sample `r`.
fn stamp_ecg_complex(trace: &mut [f64], r: usize, fs: f64) {
    let half = (0.35 * fs) as isize;
    for off in -half..=half {
        let idx = r as isize + off;
        if idx < 0 || idx as usize >= trace.len() {
            continue;
        }
        let dt = off as f64 / fs;
        let qrs = 1.1 * (-(dt / 0.012).powi(2)).exp() - 0.28 * (-((dt - 0.035) / 0.02).powi(2)).exp()
            - 0.12 * (-((dt + 0.035) / 0.02).powi(2)).exp();
        let twave = 0.22 * (-((dt - 0.22) / 0.07).powi(2)).exp();
        trace[idx as usize] += qrs + twave;
    }
}

fn synth_eeg(
    cfg: &SynthConfig,
    episode: usize,
    latents: &[StimulusLatent],
    b_e: &Tensor<f32>,
    beats: &[usize],
) -> (Tensor<f32>, Tensor<f32>) {
    let n = cfg.eeg_samples_per_run();
    let c = cfg.eeg_channels;
    let fs = cfg.eeg_rate_hz;
    let (freqs, phases) = eeg_basis(cfg);
    let mut rng = RngStream::new(cfg.seed, STREAM_EEG_NOISE).derive(episode as u64);

    // neural content: per channel, amplitude envelope = B_e · temporal
    // factor of the current clip, cosine-crossfaded at clip boundaries so
    // the signal stays inside the analysis band
    let fade = ((0.15 * fs) as usize).min(cfg.eeg_samples / 4).max(2);
    let mut envelopes = vec![0.0f64; cfg.temporal_dim * n];
    for j in 0..cfg.temporal_dim {
        let env = &mut envelopes[j * n..(j + 1) * n];
        for (k, latent) in latents.iter().enumerate() {
            let start = k * cfg.eeg_samples;
            for s in 0..cfg.eeg_samples {
                env[start + s] = latent.temporal[j];
            }
        }
        // smooth each interior boundary over ±fade/2 samples
        for k in 1..latents.len() {
            let b = k * cfg.eeg_samples;
            let prev = latents[k - 1].temporal[j];
            let next = latents[k].temporal[j];
            for x in 0..fade {
                let idx = b - fade / 2 + x;
                if idx >= n {
                    break;
                }
                let w = 0.5 * (1.0 - (std::f64::consts::PI * x as f64 / fade as f64).cos());
                env[idx] = prev + (next - prev) * w;
            }
        }
    }

    let mut clean = vec![0.0f64; c * n];
    for (j, (&fj, &pj)) in freqs.iter().zip(phases.iter()).enumerate() {
        let env = &envelopes[j * n..(j + 1) * n];
        let carrier: Vec<f64> = (0..n)
            .map(|s| (std::f64::consts::TAU * fj * s as f64 / fs + pj).sin())
            .collect();
        for ch in 0..c {
            let gain = b_e.data()[ch * cfg.temporal_dim + j] as f64;
            if gain.abs() < 1e-12 {
                continue;
            }
            let dst = &mut clean[ch * n..(ch + 1) * n];
            for s in 0..n {
                dst[s] += gain * env[s] * carrier[s];
            }
        }
    }

    // global neural rms sets artifact and noise scales
    let rms = {
        let ss: f64 = clean.iter().map(|x| x * x).sum();
        (ss / clean.len() as f64).sqrt().max(1e-9)
    };

    // background activity: a random-phase sinusoid mixture confined to the
    // 0.5–28 Hz analysis band, so the band-pass stage is transparent to it
    let mut noisy = clean.clone();
    let noise_gain = 10f64.powf(-cfg.snr_db / 20.0) * rms;
    let n_noise_tones = 24;
    let tone_amp = noise_gain * (2.0 / n_noise_tones as f64).sqrt();
    for ch in 0..c {
        for _ in 0..n_noise_tones {
            let f = rng.uniform_range(0.5, 28.0);
            let phase = rng.uniform_f64() * std::f64::consts::TAU;
            let w = std::f64::consts::TAU * f / fs;
            for s in 0..n {
                noisy[ch * n + s] += tone_amp * (w * s as f64 + phase).sin();
            }
        }
    }

    // powerline pickup, shared phase, per-channel gain near unity
    if cfg.powerline_amp > 0.0 {
        let phase = rng.uniform_f64() * std::f64::consts::TAU;
        for ch in 0..c {
            let gain = cfg.powerline_amp * rms * (0.8 + 0.4 * rng.uniform_f64());
            for s in 0..n {
                let t = s as f64 / fs;
                noisy[ch * n + s] += gain * (std::f64::consts::TAU * 50.0 * t + phase).sin();
            }
        }
    }

    // beat-locked cardiac artifact, identical template per channel
    if cfg.ecg_coupling > 0.0 {
        let couplings: Vec<f64> = (0..c)
            .map(|_| cfg.ecg_coupling * rms * (0.4 + 0.6 * rng.normal_f64().abs()))
            .collect();
        let span = (0.30 * fs) as isize;
        for &b in beats {
            for off in -span..=span {
                let idx = b as isize + off;
                if idx < 0 || idx as usize >= n {
                    continue;
                }
                let dt = off as f64 / fs;
                let pulse = (-(dt / 0.05).powi(2)).exp() * (1.0 - 2.5 * dt)
                    + 0.3 * (-((dt - 0.12) / 0.06).powi(2)).exp();
                for ch in 0..c {
                    noisy[ch * n + idx as usize] += couplings[ch] * pulse;
                }
            }
        }
    }

    let to_f32 = |d: Vec<f64>| tensor_f32(&[c, n], d);
    (to_f32(clean), to_f32(noisy))
}

/// Renders one clip: a colored block whose appearance comes from the spatial
/// factor and whose trajectory comes from the temporal factor.
pub fn render_clip_video(cfg: &SynthConfig, latent: &StimulusLatent) -> Tensor<f32> {
    let (frames, hw) = (cfg.frames_per_clip, cfg.frame_size);
    let block = (hw / 4).max(2);
    let s = &latent.spatial;
    let t = &latent.temporal;
    let dim = |v: &[f64], i: usize| if i < v.len() { v[i] } else { 0.0 };

    // appearance: block color + background gradient
    let color = [
        0.5 + 0.45 * dim(s, 0).tanh(),
        0.5 + 0.45 * dim(s, 1).tanh(),
        0.5 + 0.45 * dim(s, 2).tanh(),
    ];
    let bg = [
        0.06 + 0.05 * (0.5 + 0.5 * dim(s, 3).tanh()),
        0.06 + 0.05 * (0.5 + 0.5 * dim(s, 4).tanh()),
        0.06 + 0.05 * (0.5 + 0.5 * dim(s, 5).tanh()),
    ];
    let grad = 0.04 * dim(s, 6).tanh();

    let mut data = vec![0.0f32; frames * hw * hw * 3];
    let span = (hw - block) as f64;
    for f in 0..frames {
        // full-amplitude orbit; the motion factor sets speeds and phases so
        // the block always moves and every clip's trajectory is distinct
        let theta = std::f64::consts::TAU * f as f64 / frames as f64;
        let px = span
            * (0.5
                + 0.35
                    * (theta * (1.0 + 0.5 * dim(t, 0).tanh()) + std::f64::consts::PI * dim(t, 1).tanh())
                        .cos());
        let py = span
            * (0.5
                + 0.35
                    * (theta * (1.0 + 0.5 * dim(t, 2).tanh()) + std::f64::consts::PI * dim(t, 3).tanh())
                        .sin());
        let (px, py) = (px.round() as usize, py.round() as usize);
        for y in 0..hw {
            for x in 0..hw {
                let inside = y >= py && y < py + block && x >= px && x < px + block;
                let base = ((f * hw + y) * hw + x) * 3;
                for ch in 0..3 {
                    let v = if inside {
                        color[ch]
                    } else {
                        bg[ch] + grad * (y as f64 / hw as f64 - 0.5)
                    };
                    data[base + ch] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[frames, hw, hw, 3], data).expect("rendered values finite")
}

/// Generates the full on-disk dataset and its manifest. `split` gives the
/// (train, test) episode counts.
pub fn generate_dataset(cfg: &SynthConfig, root: &Path, split: (usize, usize)) -> Result<DatasetManifest> {
    cfg.validate().map_err(Error::Config)?;
    std::fs::create_dir_all(root).map_err(|e| Error::Io {
        path: root.display().to_string(),
        source: e,
    })?;

    let (a_f, b_e) = mixing_matrices(cfg);
    cbtf::write_f32(&a_f, &root.join("mixing_af.cbtf"))?;
    cbtf::write_f32(&b_e, &root.join("mixing_be.cbtf"))?;

    let mut runs = Vec::new();
    let mut clips = Vec::new();
    let clip_seed_base = RngStream::new(cfg.seed, STREAM_CLIPS);
    for episode in 0..cfg.n_episodes {
        let run = synth_run(cfg, episode);
        let fmri_rel = format!("runs/run_{episode:03}.fmri.cbtf");
        let eeg_rel = format!("runs/run_{episode:03}.eeg.cbtf");
        let ecg_rel = format!("runs/run_{episode:03}.ecg.cbtf");
        cbtf::write_f32(&run.fmri, &root.join(&fmri_rel))?;
        cbtf::write_f32(&run.eeg, &root.join(&eeg_rel))?;
        cbtf::write_f32(&run.ecg, &root.join(&ecg_rel))?;

        for (k, latent) in run.latents.iter().enumerate() {
            let clip_index = episode * cfg.clips_per_episode + k;
            let video = render_clip_video(cfg, latent);
            let video_rel = format!("dataset/episode_{episode:03}/clip_{clip_index:04}.video.cbtf");
            cbtf::write_f32(&video, &root.join(&video_rel))?;
            clips.push(ClipRecord {
                clip_index,
                episode,
                clip_in_episode: k,
                class_id: latent.class_id,
                caption: latent.caption.clone(),
                seed: clip_seed_base.derive(clip_index as u64).state_key(),
                split: Split::Unassigned,
                video: FileRef::describe(root, &video_rel, video.shape(), cbtf_offset(video.rank()))?,
                fmri: None,
                eeg: None,
            });
        }

        runs.push(RunRecord {
            episode,
            fmri: FileRef::describe(root, &fmri_rel, run.fmri.shape(), cbtf_offset(2))?,
            eeg: FileRef::describe(root, &eeg_rel, run.eeg.shape(), cbtf_offset(2))?,
            ecg: FileRef::describe(root, &ecg_rel, run.ecg.shape(), cbtf_offset(2))?,
            tr_events: run.tr_events.clone(),
            ecg_beats: run.ecg_beats.clone(),
        });
    }

    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        mixing_a_f: FileRef::describe(root, "mixing_af.cbtf", a_f.shape(), cbtf_offset(2))?,
        mixing_b_e: FileRef::describe(root, "mixing_be.cbtf", b_e.shape(), cbtf_offset(2))?,
        runs,
        clips,
        preprocessing: None,
    };
    manifest.split_train_test(split.0, split.1)?;
    manifest.save(root)?;
    Ok(manifest)
}

/// Header size of a CBTF file of the given rank.
pub fn cbtf_offset(rank: usize) -> u64 {
    8 + 8 * rank as u64
}
