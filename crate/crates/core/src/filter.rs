//! Butterworth IIR design as second-order sections, and zero-phase filtering.
//!
//! Designs follow the classic route: analog prototype poles, frequency
//! transformation, bilinear transform with pre-warping, then pairing of
//! conjugate poles into biquads.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{NesError, Result};

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Direct-form-II-transposed state reached after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z1 = self.b[2] - self.a[1] * g;
        let z0 = self.b[1] - self.a[0] * g + z1;
        [z0, z1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Butterworth band-pass of prototype order `order` (so `2 * order` poles).
    pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(NesError::config("filter order must be at least 1"));
        }
        if !(fs > 0.0 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(NesError::config(format!(
                "band edges must satisfy 0 < low < high < fs/2 (got {low_hz}, {high_hz} at fs={fs})"
            )));
        }
        let wl = prewarp(low_hz, fs);
        let wh = prewarp(high_hz, fs);
        let bw = wh - wl;
        let w0sq = wl * wh;

        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0sq).sqrt();
            poles.push((pb + disc) / 2.0);
            poles.push((pb - disc) / 2.0);
        }
        let zpoles: Vec<Complex64> = poles.iter().map(|&s| bilinear(s, fs)).collect();
        let mut sections = pair_poles(&zpoles, |_| [1.0, 0.0, -1.0], [1.0, 1.0, 0.0]);
        // A real-pole leftover can only occur for odd totals, which band-pass never has.
        debug_assert!(sections.iter().all(|s| s.b == [1.0, 0.0, -1.0]));

        let center = 2.0 * ((wl * wh).sqrt() / (2.0 * fs)).atan();
        normalize_gain(&mut sections, Complex64::from_polar(1.0, center));
        Ok(Sos { sections })
    }

    /// Butterworth low-pass of order `order`, unit gain at DC.
    pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(NesError::config("filter order must be at least 1"));
        }
        if !(fs > 0.0 && 0.0 < cutoff_hz && cutoff_hz < fs / 2.0) {
            return Err(NesError::config(format!(
                "cutoff must satisfy 0 < cutoff < fs/2 (got {cutoff_hz} at fs={fs})"
            )));
        }
        let wc = prewarp(cutoff_hz, fs);
        let zpoles: Vec<Complex64> = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let mut sections = pair_poles(&zpoles, |_| [1.0, 2.0, 1.0], [1.0, 1.0, 0.0]);
        normalize_gain(&mut sections, Complex64::new(1.0, 0.0));
        Ok(Sos { sections })
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs);
        self.sections
            .iter()
            .map(|s| s.response(z))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Per-section initial state for a unit-amplitude constant input.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal filtering from state `states`; the states are updated in place.
    fn run(&self, signal: &mut [f64], states: &mut [[f64; 2]]) {
        for (sec, st) in self.sections.iter().zip(states.iter_mut()) {
            let [b0, b1, b2] = sec.b;
            let [a1, a2] = sec.a;
            let (mut z0, mut z1) = (st[0], st[1]);
            for v in signal.iter_mut() {
                let x = *v;
                let y = b0 * x + z0;
                z0 = b1 * x - a1 * y + z1;
                z1 = b2 * x - a2 * y;
                *v = y;
            }
            *st = [z0, z1];
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        let mut states = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut out, &mut states);
        out
    }

    /// Forward-backward (zero-phase) filtering.
    ///
    /// The signal is extended at both ends by odd reflection and each pass starts
    /// from the steady state of its first sample, so constant inputs produce no
    /// start-up transient. The whole operation is linear in the input.
    pub fn filtfilt(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let first = signal[0];
        let last = signal[n - 1];
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

        let unit = self.step_states();
        let scaled = |x0: f64| unit.iter().map(|s| [s[0] * x0, s[1] * x0]).collect::<Vec<_>>();

        let mut states = scaled(ext[0]);
        self.run(&mut ext, &mut states);
        ext.reverse();
        let mut states = scaled(ext[0]);
        self.run(&mut ext, &mut states);
        ext.reverse();

        ext[pad..pad + n].to_vec()
    }
}

fn prewarp(freq_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * freq_hz / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Left-half-plane poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups digital poles into biquads: each upper-half-plane pole with its
/// conjugate, leftover real poles two at a time, and a final single real pole
/// as a first-order section with numerator `single_b`.
fn pair_poles(
    poles: &[Complex64],
    pair_b: impl Fn(usize) -> [f64; 3],
    single_b: [f64; 3],
) -> Vec<Biquad> {
    const REAL_TOL: f64 = 1e-10;
    let mut sections = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im.abs() <= REAL_TOL {
            reals.push(p.re);
        } else if p.im > 0.0 {
            let idx = sections.len();
            sections.push(Biquad {
                b: pair_b(idx),
                a: [-2.0 * p.re, p.norm_sqr()],
            });
        }
    }
    reals.sort_by(|a, b| a.total_cmp(b));
    let mut chunks = reals.chunks_exact(2);
    for pair in &mut chunks {
        let idx = sections.len();
        sections.push(Biquad {
            b: pair_b(idx),
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    if let [p] = chunks.remainder() {
        sections.push(Biquad {
            b: single_b,
            a: [-p, 0.0],
        });
    }
    sections
}

fn normalize_gain(sections: &mut [Biquad], z: Complex64) {
    let h = sections
        .iter()
        .map(|s| s.response(z))
        .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
        .norm();
    if let Some(first) = sections.first_mut() {
        for b in &mut first.b {
            *b /= h;
        }
    }
}
