//! Zero-phase IIR filtering: Butterworth band edges built from cascaded
//! biquads, a narrow notch, and forward–backward application with odd
//! reflection padding.

use crate::{PreprocError, Result};

/// One second-order section, direct form II transposed, f64 state.
#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn lowpass(f0: f64, fs: f64, q: f64) -> Self {
        let w0 = std::f64::consts::TAU * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: ((1.0 - cw) / 2.0) / a0,
            b1: (1.0 - cw) / a0,
            b2: ((1.0 - cw) / 2.0) / a0,
            a1: (-2.0 * cw) / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn highpass(f0: f64, fs: f64, q: f64) -> Self {
        let w0 = std::f64::consts::TAU * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: ((1.0 + cw) / 2.0) / a0,
            b1: (-(1.0 + cw)) / a0,
            b2: ((1.0 + cw) / 2.0) / a0,
            a1: (-2.0 * cw) / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn notch(f0: f64, fs: f64, q: f64) -> Self {
        let w0 = std::f64::consts::TAU * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: 1.0 / a0,
            b1: (-2.0 * cw) / a0,
            b2: 1.0 / a0,
            a1: (-2.0 * cw) / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// DC gain of the section.
    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Runs the section with its state pre-loaded to the steady-state
    /// response for a constant input `x0`, so a step-like pad does not ring
    /// into the data.
    fn run(&self, x: &mut [f64], x0: f64) {
        let y_inf = self.dc_gain();
        let mut s1 = (y_inf - self.b0) * x0;
        let mut s2 = (self.b2 - self.a2 * y_inf) * x0;
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * out + s2;
            s2 = self.b2 * input - self.a2 * out;
            *v = out;
        }
    }
}

/// A cascade of biquads plus the settling time that governs the reflection
/// pad in [`FilterCascade::filtfilt`].
#[derive(Clone, Debug)]
pub struct FilterCascade {
    sections: Vec<Biquad>,
    settle_seconds: f64,
    fs: f64,
}

// Butterworth pole Q values for a 4th-order response split into two
// second-order sections: 1/(2cos(π/8)) and 1/(2cos(3π/8)).
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

impl FilterCascade {
    /// 4th-order Butterworth band-pass, built as a high-pass at `low`
    /// cascaded with a low-pass at `high` (two sections each).
    pub fn butter_bandpass(low: f64, high: f64, fs: f64) -> Result<Self> {
        if fs <= 2.0 * high || low <= 0.0 || low >= high {
            return Err(PreprocError::Config(format!(
                "bandpass {low}-{high} Hz invalid at fs {fs} Hz"
            )));
        }
        let mut sections = Vec::with_capacity(4);
        for q in BUTTER4_Q {
            sections.push(Biquad::highpass(low, fs, q));
        }
        for q in BUTTER4_Q {
            sections.push(Biquad::lowpass(high, fs, q));
        }
        // dominant settling comes from the low-frequency edge
        let settle_seconds = 4.0 * BUTTER4_Q[1] / (std::f64::consts::PI * low);
        Ok(Self {
            sections,
            settle_seconds,
            fs,
        })
    }

    /// Second-order IIR notch, Q = 30 by default at the powerline frequency.
    pub fn notch(f0: f64, fs: f64, q: f64) -> Result<Self> {
        if fs <= 2.0 * f0 || f0 <= 0.0 {
            return Err(PreprocError::Config(format!(
                "notch at {f0} Hz invalid at fs {fs} Hz"
            )));
        }
        Ok(Self {
            sections: vec![Biquad::notch(f0, fs, q)],
            settle_seconds: 4.0 * q / (std::f64::consts::PI * f0),
            fs,
        })
    }

    fn forward(&self, x: &mut [f64]) {
        // chain the steady-state level through the cascade
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            s.run(x, level);
            level *= s.dc_gain();
        }
    }

    /// Forward–backward application (zero phase). The input is extended at
    /// both ends by odd reflection so filter transients settle outside the
    /// returned span.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 2 {
            return Ok(x.to_vec());
        }
        let pad = ((self.settle_seconds * self.fs) as usize).min(n - 1).max(1);
        // Symmetric (even) reflection: keeps the pad's local mean equal to
        // the data's, so the low-frequency sections see no step at the
        // junction. Odd reflection would double the endpoint level and ring
        // a multi-second transient into the span at a 0.1 Hz corner.
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(x[n - 1 - i]);
        }

        self.forward(&mut ext);
        ext.reverse();
        self.forward(&mut ext);
        ext.reverse();

        let out = ext[pad..pad + n].to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PreprocError::Numeric("filter produced non-finite output".into()));
        }
        Ok(out)
    }
}

/// Amplitude of the component of `x` at frequency `f` (Goertzel-style
/// projection onto the quadrature pair). Measurement helper for tests and
/// run logs; windows an integer number of cycles for low leakage.
pub fn tone_amplitude(x: &[f64], fs: f64, f: f64) -> f64 {
    let cycles = ((x.len() as f64 / fs) * f).floor().max(1.0);
    let span = ((cycles / f) * fs).round() as usize;
    let span = span.min(x.len());
    let mut re = 0.0;
    let mut im = 0.0;
    for (i, &v) in x[..span].iter().enumerate() {
        let phase = std::f64::consts::TAU * f * i as f64 / fs;
        re += v * phase.cos();
        im += v * phase.sin();
    }
    2.0 * (re * re + im * im).sqrt() / span as f64
}

/// Root mean square of a slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
