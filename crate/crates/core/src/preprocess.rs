//! Signal conditioning: raw recordings in, model-ready feature tuples out.
//!
//! The chain per recording is band-pass, per-channel mean removal,
//! segmentation into the four trial states, per-channel z-scoring of the
//! imagined and spoken segments, and windowed power. Speech is brought down to
//! the EEG rate and reduced to a peak-normalised power envelope.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};
use crate::filter::Sos;

/// One multichannel recording covering a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub participant: String,
    pub trial: u32,
    /// `[n_channels x n_samples]`.
    pub channels: Array2<f64>,
    pub sample_rate_hz: f64,
    /// Sample indices where the stimulus, imagined and speaking states begin.
    pub state_marks: [usize; 3],
    pub speech: Vec<f64>,
    pub speech_rate_hz: f64,
    pub label: String,
    /// Index of `label` in the dataset's label list.
    pub class: usize,
}

impl RawRecording {
    pub fn n_channels(&self) -> usize {
        self.channels.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels() == 0 {
            return Err(NesError::data(format!("{}: no channels", self.describe())));
        }
        if !(self.sample_rate_hz > 0.0 && self.speech_rate_hz > 0.0) {
            return Err(NesError::data(format!(
                "{}: sample rates must be positive",
                self.describe()
            )));
        }
        check_marks(&self.state_marks, self.n_samples())
            .map_err(|e| NesError::data(format!("{}: {e}", self.describe())))
    }

    pub fn describe(&self) -> String {
        format!("participant {} trial {}", self.participant, self.trial)
    }
}

/// The imagined and spoken EEG segments of one trial, with its speech envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub imagined: Array2<f64>,
    pub spoken: Array2<f64>,
    pub speech_envelope: Vec<f64>,
    pub label: String,
    pub class: usize,
}

/// Per-trial model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTuple {
    /// One row per context channel, `[n_ctx x D]`.
    pub xs: Array2<f64>,
    /// Spoken-EEG feature vector, length `M`.
    pub y: Array1<f64>,
    /// Envelope regression target, length `L`.
    pub target: Array1<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    /// Rate the speech waveform is brought to before envelope extraction.
    pub speech_target_hz: f64,
    /// Feature dimension `D` (also the spoken-EEG dimension `M`).
    pub d: usize,
    /// Envelope target length `L`; `None` means `L = D`.
    pub l: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 1.0,
            band_high_hz: 200.0,
            filter_order: 4,
            win_ms: 20.0,
            hop_ms: 10.0,
            speech_target_hz: 1000.0,
            d: 50,
            l: None,
        }
    }
}

impl PreprocessConfig {
    pub fn target_len(&self) -> usize {
        self.l.unwrap_or(self.d)
    }
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(
    signal: &[f64],
    sample_rate_hz: f64,
    low_hz: f64,
    high_hz: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let sos = Sos::butter_bandpass(order, low_hz, high_hz, sample_rate_hz)?;
    check_finite(signal)?;
    Ok(sos.filtfilt(signal))
}

fn check_finite(signal: &[f64]) -> Result<()> {
    match signal.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(NesError::data(format!("non-finite sample at index {i}"))),
        None => Ok(()),
    }
}

pub fn demean_channels(channels: &Array2<f64>) -> Array2<f64> {
    let mut out = channels.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / row.len().max(1) as f64;
        row.mapv_inplace(|v| v - mean);
    }
    out
}

/// Per-channel z-scoring (population variance). Constant channels become zeros.
pub fn normalize_channels(channels: &Array2<f64>) -> Array2<f64> {
    let mut out = channels.clone();
    for mut row in out.rows_mut() {
        let n = row.len();
        if n == 0 {
            continue;
        }
        let mean = row.sum() / n as f64;
        row.mapv_inplace(|v| v - mean);
        // second pass removes the residual mean left by rounding
        let resid = row.sum() / n as f64;
        row.mapv_inplace(|v| v - resid);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if var > 0.0 && var.is_finite() {
            let sd = var.sqrt();
            row.mapv_inplace(|v| v / sd);
        } else {
            row.fill(0.0);
        }
    }
    out
}

fn check_marks(marks: &[usize; 3], n_samples: usize) -> std::result::Result<(), String> {
    let bounds = [0, marks[0], marks[1], marks[2], n_samples];
    if bounds.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(format!(
            "state marks {marks:?} must be strictly increasing inside (0, {n_samples})"
        ))
    }
}

/// Rest, stimulus, imagined and speaking segments, in that order.
pub fn segment_states(rec: &RawRecording) -> Result<[Array2<f64>; 4]> {
    check_marks(&rec.state_marks, rec.n_samples())
        .map_err(|e| NesError::data(format!("{}: {e}", rec.describe())))?;
    let [a, b, c] = rec.state_marks;
    let n = rec.n_samples();
    let seg = |lo: usize, hi: usize| rec.channels.slice(s![.., lo..hi]).to_owned();
    Ok([seg(0, a), seg(a, b), seg(b, c), seg(c, n)])
}

fn samples_for_ms(ms: f64, sample_rate_hz: f64) -> usize {
    (ms * sample_rate_hz / 1000.0).round() as usize
}

/// Number of whole windows of length `win` advanced by `hop` over `n` samples.
pub fn window_count(n: usize, win: usize, hop: usize) -> usize {
    if n < win || win == 0 || hop == 0 {
        0
    } else {
        (n - win) / hop + 1
    }
}

/// Mean squared amplitude over consecutive windows.
pub fn window_power(
    signal: &[f64],
    sample_rate_hz: f64,
    win_ms: f64,
    hop_ms: f64,
) -> Result<Vec<f64>> {
    let win = samples_for_ms(win_ms, sample_rate_hz);
    let hop = samples_for_ms(hop_ms, sample_rate_hz);
    if win == 0 || hop == 0 {
        return Err(NesError::config(format!(
            "window {win_ms} ms / hop {hop_ms} ms is shorter than one sample at {sample_rate_hz} Hz"
        )));
    }
    if signal.len() < win {
        return Err(NesError::data(format!(
            "signal of {} samples is shorter than one {win}-sample window",
            signal.len()
        )));
    }
    let count = window_count(signal.len(), win, hop);
    Ok((0..count)
        .map(|k| {
            let w = &signal[k * hop..k * hop + win];
            w.iter().map(|v| v * v).sum::<f64>() / win as f64
        })
        .collect())
}

/// Anti-aliased rate reduction.
///
/// A zero-phase order-8 Butterworth low-pass at `0.45 * to_hz` is applied, then
/// the output is read at times `k / to_hz` with linear interpolation, giving
/// `ceil(n * to_hz / from_hz)` samples. Equal rates return the input untouched.
pub fn downsample(speech: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if !(from_hz > 0.0 && to_hz > 0.0) {
        return Err(NesError::config("sample rates must be positive"));
    }
    if from_hz < to_hz {
        return Err(NesError::config(format!(
            "cannot upsample from {from_hz} Hz to {to_hz} Hz"
        )));
    }
    if from_hz == to_hz {
        return Ok(speech.to_vec());
    }
    check_finite(speech)?;
    let n = speech.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let sos = Sos::butter_lowpass(8, 0.45 * to_hz, from_hz)?;
    let smooth = sos.filtfilt(speech);
    let ratio = from_hz / to_hz;
    let out_len = ((n as f64 / ratio) - 1e-9).ceil() as usize;
    Ok((0..out_len)
        .map(|k| interpolate(&smooth, k as f64 * ratio))
        .collect())
}

fn interpolate(signal: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    if i + 1 >= signal.len() {
        return signal[signal.len() - 1];
    }
    let frac = pos - i as f64;
    if frac == 0.0 {
        signal[i]
    } else {
        signal[i] + frac * (signal[i + 1] - signal[i])
    }
}

/// Windowed speech power, scaled so its peak is 1. A silent signal stays zero.
pub fn speech_envelope(speech: &[f64], sample_rate_hz: f64) -> Result<Vec<f64>> {
    speech_envelope_with(speech, sample_rate_hz, 20.0, 10.0)
}

pub fn speech_envelope_with(
    speech: &[f64],
    sample_rate_hz: f64,
    win_ms: f64,
    hop_ms: f64,
) -> Result<Vec<f64>> {
    if speech.is_empty() {
        return Err(NesError::data("empty speech signal"));
    }
    let mut env = window_power(speech, sample_rate_hz, win_ms, hop_ms)?;
    let peak = env.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        env.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(env)
}

/// Right-pads every vector with zeros to length `len`, one row per vector.
pub fn pad_to_length(vectors: &[Vec<f64>], len: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((vectors.len(), len));
    for (i, v) in vectors.iter().enumerate() {
        if v.len() > len {
            return Err(NesError::data(format!(
                "vector {i} has length {} > target {len}",
                v.len()
            )));
        }
        out.slice_mut(s![i, ..v.len()])
            .assign(&ArrayView1::from(v.as_slice()));
    }
    Ok(out)
}

/// Linear-interpolation resampling of `values` onto `len` evenly spaced points
/// spanning the same range. Endpoints are preserved; `len == values.len()` is
/// the identity.
pub fn resample_linear(values: &[f64], len: usize) -> Vec<f64> {
    match (values.len(), len) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; len],
        (1, _) => vec![values[0]; len],
        (_, 1) => vec![values[0]],
        (n, _) => {
            let step = (n - 1) as f64 / (len - 1) as f64;
            (0..len)
                .map(|j| {
                    if j == len - 1 {
                        values[n - 1]
                    } else {
                        interpolate(values, j as f64 * step)
                    }
                })
                .collect()
        }
    }
}

/// Full conditioning of one recording with a pass-through artifact hook.
pub fn prepare_trial(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<Trial> {
    prepare_trial_with(rec, cfg, &|_| {})
}

/// Full conditioning of one recording. `artifact_hook` runs on the band-passed,
/// de-meaned channels before segmentation; ocular-artifact removal plugs in here.
pub fn prepare_trial_with(
    rec: &RawRecording,
    cfg: &PreprocessConfig,
    artifact_hook: &dyn Fn(&mut Array2<f64>),
) -> Result<Trial> {
    rec.validate()?;
    let mut filtered = Array2::zeros(rec.channels.raw_dim());
    for (i, row) in rec.channels.axis_iter(Axis(0)).enumerate() {
        let out = bandpass(
            &row.to_vec(),
            rec.sample_rate_hz,
            cfg.band_low_hz,
            cfg.band_high_hz,
            cfg.filter_order,
        )
        .map_err(|e| annotate(e, rec))?;
        filtered.row_mut(i).assign(&Array1::from(out));
    }
    let mut cleaned = demean_channels(&filtered);
    artifact_hook(&mut cleaned);

    let conditioned = RawRecording {
        channels: cleaned,
        ..rec.clone()
    };
    let [_, _, imagined, spoken] = segment_states(&conditioned)?;

    let speech = downsample(&rec.speech, rec.speech_rate_hz, cfg.speech_target_hz)
        .map_err(|e| annotate(e, rec))?;
    let speech_envelope = speech_envelope_with(&speech, cfg.speech_target_hz, cfg.win_ms, cfg.hop_ms)
        .map_err(|e| annotate(e, rec))?;

    Ok(Trial {
        imagined: normalize_channels(&imagined),
        spoken: normalize_channels(&spoken),
        speech_envelope,
        label: rec.label.clone(),
        class: rec.class,
    })
}

fn annotate(err: NesError, rec: &RawRecording) -> NesError {
    match err {
        NesError::Data(msg) => NesError::Data(format!("{}: {msg}", rec.describe())),
        other => other,
    }
}

/// Windowed-power features for the model.
///
/// Each imagined channel's window powers are resampled to `D` points. The
/// spoken-EEG vector averages window powers over channels and is resampled to
/// `M = D`. The envelope is zero-padded to `L`, or resampled when longer.
pub fn trial_to_features(
    trial: &Trial,
    sample_rate_hz: f64,
    cfg: &PreprocessConfig,
) -> Result<FeatureTuple> {
    let d = cfg.d;
    if d == 0 {
        return Err(NesError::config("feature dimension must be positive"));
    }
    let mut xs = Array2::zeros((trial.imagined.nrows(), d));
    for (i, row) in trial.imagined.axis_iter(Axis(0)).enumerate() {
        let p = window_power(&row.to_vec(), sample_rate_hz, cfg.win_ms, cfg.hop_ms)?;
        xs.row_mut(i).assign(&Array1::from(resample_linear(&p, d)));
    }

    let mut pooled: Vec<f64> = Vec::new();
    for row in trial.spoken.axis_iter(Axis(0)) {
        let p = window_power(&row.to_vec(), sample_rate_hz, cfg.win_ms, cfg.hop_ms)?;
        if pooled.is_empty() {
            pooled = p;
        } else {
            pooled.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    let n_spoken = trial.spoken.nrows().max(1) as f64;
    pooled.iter_mut().for_each(|v| *v /= n_spoken);
    let y = Array1::from(resample_linear(&pooled, d));

    let l = cfg.target_len();
    let env = &trial.speech_envelope;
    let target = if env.len() <= l {
        pad_to_length(std::slice::from_ref(env), l)?.row(0).to_owned()
    } else {
        Array1::from(resample_linear(env, l))
    };

    Ok(FeatureTuple {
        xs,
        y,
        target,
        class: trial.class,
    })
}
