//! QRS detection and beat-locked template subtraction of cardiac artifacts.
//!
//! Detection is Pan–Tompkins-style and fully deterministic: band-pass the
//! ECG to the QRS band, square the derivative, smooth, then threshold at
//! half a rolling maximum with a 250 ms refractory window.

use crate::filter::FilterCascade;
use crate::Result;

/// Detected R-peak sample indices.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<usize>> {
    let n = ecg.len();
    if n < (fs as usize) {
        return Ok(Vec::new());
    }
    let bp = FilterCascade::butter_bandpass(5.0, 15.0, fs)?;
    let filtered = bp.filtfilt(ecg)?;

    // squared derivative, then an 80 ms moving-average envelope
    let mut energy = vec![0.0; n];
    for i in 1..n {
        let d = filtered[i] - filtered[i - 1];
        energy[i] = d * d;
    }
    let win = ((0.080 * fs) as usize).max(1);
    let mut env = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += energy[i];
        if i >= win {
            acc -= energy[i - win];
        }
        env[i] = acc / win as f64;
    }

    // rolling maximum over a 2 s window sets the adaptive threshold
    let roll = ((2.0 * fs) as usize).max(1);
    let refractory = (0.250 * fs) as usize;
    let search = ((0.060 * fs) as usize).max(1);
    let mut peaks = Vec::new();
    let mut rolling_max = env.iter().take(roll).cloned().fold(0.0, f64::max);
    let mut last_peak: isize = -(refractory as isize) - 1;

    let mut i = 0;
    while i < n {
        // refresh the rolling max lazily
        if i % (roll / 2).max(1) == 0 {
            let lo = i.saturating_sub(roll / 2);
            let hi = (i + roll / 2).min(n);
            rolling_max = env[lo..hi].iter().cloned().fold(0.0, f64::max).max(1e-12);
        }
        let threshold = 0.5 * rolling_max;
        if env[i] > threshold && (i as isize - last_peak) > refractory as isize {
            // localize the R peak on the band-passed trace near the crossing
            let lo = i.saturating_sub(search);
            let hi = (i + search).min(n - 1);
            let mut best = lo;
            for j in lo..=hi {
                if filtered[j] > filtered[best] {
                    best = j;
                }
            }
            peaks.push(best);
            last_peak = best as isize;
            i = best + refractory;
            continue;
        }
        i += 1;
    }
    Ok(peaks)
}

/// Outcome of template subtraction.
pub struct QrsCleanup {
    /// channels × samples with the averaged beat template removed per beat.
    pub eeg: Vec<Vec<f64>>,
    pub peaks: Vec<usize>,
    /// False when too few beats were found and the data passed through.
    pub applied: bool,
}

/// Removes the average R-locked artifact from every channel. Requires at
/// least 10 detectable beats; otherwise the input passes through unchanged
/// with `applied = false` so the caller can flag the run.
pub fn remove_cardiac_artifact(eeg: &[Vec<f64>], ecg: &[f64], fs: f64) -> Result<QrsCleanup> {
    let peaks = detect_r_peaks(ecg, fs)?;
    if peaks.len() < 10 {
        return Ok(QrsCleanup {
            eeg: eeg.to_vec(),
            peaks,
            applied: false,
        });
    }
    let n = eeg.first().map(|c| c.len()).unwrap_or(0);

    // window around each beat: −25 % to +55 % of the median RR interval,
    // clamped to ±400 ms, so adjacent templates never overlap
    let mut rr: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    rr.sort_unstable();
    let rr_med = rr[rr.len() / 2] as f64;
    let before = ((0.25 * rr_med) as usize).min((0.4 * fs) as usize).max(1);
    let after = ((0.55 * rr_med) as usize).min((0.4 * fs) as usize).max(2);

    let full: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&p| p >= before && p + after < n)
        .collect();
    if full.len() < 10 {
        return Ok(QrsCleanup {
            eeg: eeg.to_vec(),
            peaks,
            applied: false,
        });
    }

    let width = before + after;
    let mut cleaned = eeg.to_vec();
    for channel in cleaned.iter_mut() {
        let mut template = vec![0.0; width];
        for &p in &full {
            for (k, slot) in template.iter_mut().enumerate() {
                *slot += channel[p - before + k];
            }
        }
        for slot in template.iter_mut() {
            *slot /= full.len() as f64;
        }
        // Significance gate: averaging incoherent activity over n beats
        // leaves a template of power ≈ channel power / n. Subtract only when
        // the template clearly exceeds that floor, i.e. when a beat-locked
        // artifact is actually present.
        let template_power = template.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let channel_power = channel.iter().map(|v| v * v).sum::<f64>() / channel.len() as f64;
        let floor = channel_power / full.len() as f64;
        if template_power < 4.0 * floor {
            continue;
        }
        for &p in &full {
            for (k, &t) in template.iter().enumerate() {
                channel[p - before + k] -= t;
            }
        }
    }
    Ok(QrsCleanup {
        eeg: cleaned,
        peaks,
        applied: true,
    })
}
