//! On-disk datasets, the synthetic generator, and the evaluation split.
//!
//! A dataset is a directory holding `manifest.json` plus one raw file per
//! trial for EEG and one for speech. Sample files are little-endian `f32`;
//! EEG files are row-major `[n_channels x n_samples]`, speech files are mono.
//!
//! ```json
//! {"version": 1, "sample_rate_hz": 1000, "channels": ["FC6", "..."],
//!  "selected_channels": ["FC6"], "labels": ["iy", "uw"],
//!  "trials": [{"participant": "MM05", "trial": 1, "label": "uw",
//!              "file": "t0001.f32", "n_samples": 4000, "state_marks": [1000, 2000, 3000],
//!              "speech_file": "s0001.f32", "speech_rate_hz": 16000}]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};
use crate::eval::{cross_correlation, PROMPTS};
use crate::math::seeded_rng;
use crate::preprocess::{prepare_trial, trial_to_features, FeatureTuple, PreprocessConfig, RawRecording};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// The ten channels the recovery experiments single out.
pub const SELECTED_10: [&str; 10] = ["FC6", "FT8", "C5", "CP3", "P3", "T7", "CP5", "C3", "CP1", "C4"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub participant: String,
    pub trial: u32,
    pub label: String,
    pub file: String,
    /// Samples per channel; when omitted it is inferred from the file size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    pub state_marks: [usize; 3],
    pub speech_file: String,
    pub speech_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_channels: Option<Vec<String>>,
    pub labels: Vec<String>,
    pub trials: Vec<TrialEntry>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NesError::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|source| NesError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(NesError::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(NesError::data("manifest sample rate must be positive"));
        }
        if self.channels.is_empty() {
            return Err(NesError::data("manifest lists no channels"));
        }
        if let Some(sel) = &self.selected_channels {
            if let Some(bad) = sel.iter().find(|c| !self.channels.contains(c)) {
                return Err(NesError::data(format!("selected channel '{bad}' is not in the channel list")));
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.labels.iter().find(|l| !seen.insert(*l)) {
            return Err(NesError::data(format!("label '{dup}' is listed twice")));
        }
        Ok(())
    }
}

/// Which channels to keep when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelSelection {
    All,
    /// The manifest's `selected_channels`, or all channels when it has none.
    #[default]
    Selected,
}

/// Recordings plus the metadata needed to write them back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate_hz: f64,
    /// Names of the rows of every recording's channel matrix.
    pub channels: Vec<String>,
    pub selected_channels: Option<Vec<String>>,
    pub labels: Vec<String>,
    pub recordings: Vec<RawRecording>,
}

impl Dataset {
    /// Conditions every recording and reduces it to model inputs.
    pub fn features(&self, cfg: &PreprocessConfig) -> Result<Vec<FeatureTuple>> {
        self.recordings
            .iter()
            .map(|rec| {
                let trial = prepare_trial(rec, cfg)?;
                trial_to_features(&trial, rec.sample_rate_hz, cfg)
            })
            .collect()
    }

    pub fn class_labels(&self) -> Vec<&str> {
        self.recordings.iter().map(|r| r.label.as_str()).collect()
    }
}

fn read_f32(path: &Path) -> std::io::Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("size {} is not a multiple of 4 bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

fn write_f32<'a>(path: &Path, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| NesError::io(path, e))
}

/// Loads a dataset, keeping the manifest's selected channels when present.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(manifest_path, ChannelSelection::Selected)
}

pub fn load_dataset_with(manifest_path: impl AsRef<Path>, selection: ChannelSelection) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let m = DatasetManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));

    let keep: Vec<usize> = match (&m.selected_channels, selection) {
        (Some(sel), ChannelSelection::Selected) => sel
            .iter()
            .map(|c| m.channels.iter().position(|n| n == c).expect("validated"))
            .collect(),
        _ => (0..m.channels.len()).collect(),
    };
    let n_ch = m.channels.len();

    let mut recordings = Vec::with_capacity(m.trials.len());
    for t in &m.trials {
        let who = format!("participant {} trial {}", t.participant, t.trial);
        let class = m
            .labels
            .iter()
            .position(|l| *l == t.label)
            .ok_or_else(|| NesError::data(format!("{who}: unknown label '{}'", t.label)))?;

        let eeg_path = dir.join(&t.file);
        let raw = read_f32(&eeg_path)
            .map_err(|e| NesError::data(format!("{who}: cannot read {}: {e}", eeg_path.display())))?;
        let n_samples = t.n_samples.unwrap_or(raw.len() / n_ch);
        if raw.len() != n_ch * n_samples {
            return Err(NesError::data(format!(
                "{who}: {} holds {} values, expected {n_ch} channels x {n_samples} samples",
                eeg_path.display(),
                raw.len()
            )));
        }
        let channels = Array2::from_shape_fn((keep.len(), n_samples), |(r, s)| {
            raw[keep[r] * n_samples + s] as f64
        });

        let speech_path = dir.join(&t.speech_file);
        let speech = read_f32(&speech_path)
            .map_err(|e| NesError::data(format!("{who}: cannot read {}: {e}", speech_path.display())))?
            .into_iter()
            .map(f64::from)
            .collect();

        let rec = RawRecording {
            participant: t.participant.clone(),
            trial: t.trial,
            channels,
            sample_rate_hz: m.sample_rate_hz,
            state_marks: t.state_marks,
            speech,
            speech_rate_hz: t.speech_rate_hz,
            label: t.label.clone(),
            class,
        };
        rec.validate()?;
        recordings.push(rec);
    }

    Ok(Dataset {
        sample_rate_hz: m.sample_rate_hz,
        channels: keep.iter().map(|&i| m.channels[i].clone()).collect(),
        selected_channels: m.selected_channels,
        labels: m.labels,
        recordings,
    })
}

/// Writes `manifest.json` and one EEG and one speech file per recording into
/// `dir`, returning the manifest path. Samples are stored as `f32`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| NesError::io(dir, e))?;
    let mut trials = Vec::with_capacity(ds.recordings.len());
    for (i, rec) in ds.recordings.iter().enumerate() {
        if rec.n_channels() != ds.channels.len() {
            return Err(NesError::data(format!(
                "{} has {} channels but the dataset names {}",
                rec.describe(),
                rec.n_channels(),
                ds.channels.len()
            )));
        }
        let file = format!("t{:04}.f32", i + 1);
        let speech_file = format!("s{:04}.f32", i + 1);
        let eeg = rec.channels.as_standard_layout();
        write_f32(&dir.join(&file), eeg.iter())?;
        write_f32(&dir.join(&speech_file), rec.speech.iter())?;
        trials.push(TrialEntry {
            participant: rec.participant.clone(),
            trial: rec.trial,
            label: rec.label.clone(),
            file,
            n_samples: Some(rec.n_samples()),
            state_marks: rec.state_marks,
            speech_file,
            speech_rate_hz: rec.speech_rate_hz,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate_hz: ds.sample_rate_hz,
        channels: ds.channels.clone(),
        selected_channels: ds.selected_channels.clone(),
        labels: ds.labels.clone(),
        trials,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text).map_err(|e| NesError::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    /// Feature dimension the trial segments are sized for.
    pub d: usize,
    pub trials_per_class: usize,
    /// Standard deviation of the additive sensor noise.
    pub noise: f64,
    /// How strongly the spoken EEG follows the imagined pattern; 0 leaves only noise.
    pub gate_strength: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub speech_rate_hz: f64,
    /// Half-width of the moving average applied to the prototype walks.
    pub smoothing: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_channels: 8,
            d: 50,
            trials_per_class: 20,
            noise: 0.5,
            gate_strength: 1.0,
            seed: 0,
            sample_rate_hz: 1000.0,
            speech_rate_hz: 8000.0,
            smoothing: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("n_channels", self.n_channels),
            ("d", self.d),
            ("trials_per_class", self.trials_per_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(NesError::config(format!("{name} must be positive")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(NesError::config("noise level must be finite and non-negative"));
        }
        if !(self.gate_strength >= 0.0 && self.gate_strength.is_finite()) {
            return Err(NesError::config("gate strength must be finite and non-negative"));
        }
        // carriers sit at 60-110 Hz and speech at 150 Hz
        if self.sample_rate_hz < 500.0 || self.speech_rate_hz < 1000.0 {
            return Err(NesError::config(
                "synthetic data needs at least 500 Hz EEG and 1 kHz speech sampling",
            ));
        }
        Ok(())
    }

    /// Samples per trial state, chosen so a 20 ms / 10 ms window yields `d` windows.
    pub fn segment_len(&self) -> usize {
        let hop = (0.010 * self.sample_rate_hz).round() as usize;
        hop * (self.d + 1)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.n_classes)
            .map(|c| match PROMPTS.get(c) {
                Some(p) if self.n_classes <= PROMPTS.len() => p.to_string(),
                _ => format!("c{c}"),
            })
            .collect()
    }
}

/// The hidden structure behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Per-class envelope prototypes, peak 1, `d` points each.
    pub prototypes: Vec<Vec<f64>>,
    /// Per-class `[n_channels x n_sources]` mixing matrices.
    pub mixing: Vec<Array2<f64>>,
    /// Per-channel gain of the imagined pattern inside the spoken EEG.
    pub gates: Array1<f64>,
}

const CARRIERS_HZ: [f64; 3] = [60.0, 80.0, 110.0];
const SPEECH_CARRIER_HZ: f64 = 150.0;
const MAX_PROTOTYPE_CORRELATION: f64 = 0.9;

fn prototype(d: usize, smoothing: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut walk = Vec::with_capacity(d);
    let mut v: f64 = 0.0;
    for _ in 0..d {
        v = 0.8 * v + normal.sample(rng);
        walk.push(v);
    }
    let smooth: Vec<f64> = (0..d)
        .map(|i| {
            let lo = i.saturating_sub(smoothing);
            let hi = (i + smoothing + 1).min(d);
            walk[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = smooth.iter().map(|v| v - lo).collect();
    let peak = shifted.iter().copied().fold(0.0, f64::max);
    // a floor keeps every source audible
    let floored: Vec<f64> = shifted
        .iter()
        .map(|v| if peak > 0.0 { 0.1 + 0.9 * v / peak } else { 1.0 })
        .collect();
    let top = floored.iter().copied().fold(0.0, f64::max);
    floored.iter().map(|v| v / top).collect()
}

fn envelope_at(proto: &[f64], frac: f64) -> f64 {
    let pos = frac.clamp(0.0, 1.0) * (proto.len() - 1) as f64;
    let i = (pos.floor() as usize).min(proto.len() - 1);
    let j = (i + 1).min(proto.len() - 1);
    let w = pos - i as f64;
    proto[i] * (1.0 - w) + proto[j] * w
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws the class structure (prototypes, mixing matrices, gates).
pub fn synth_truth(cfg: &SynthConfig) -> Result<SynthTruth> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    while prototypes.len() < cfg.n_classes {
        let mut accepted = None;
        for _ in 0..10_000 {
            let p = prototype(cfg.d, cfg.smoothing, &mut rng);
            let distinct = prototypes.iter().all(|q| {
                cfg.d < 2
                    || cross_correlation(&p, q)
                        .map(|c| c.value < MAX_PROTOTYPE_CORRELATION)
                        .unwrap_or(true)
            });
            if distinct {
                accepted = Some(p);
                break;
            }
        }
        prototypes.push(accepted.ok_or_else(|| {
            NesError::config("could not draw distinct class prototypes; lower n_classes or raise d")
        })?);
    }
    let mixing = (0..cfg.n_classes)
        .map(|_| Array2::from_shape_fn((cfg.n_channels, CARRIERS_HZ.len()), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let gates = Array1::from_shape_fn(cfg.n_channels, |_| cfg.gate_strength * rng.random_range(0.5..1.5));
    Ok(SynthTruth {
        prototypes,
        mixing,
        gates,
    })
}

/// One synthetic trial; a pure function of the config, the truth, the class
/// and the within-class index.
pub fn synth_trial(cfg: &SynthConfig, truth: &SynthTruth, class: usize, index: usize) -> RawRecording {
    let seg = cfg.segment_len();
    let n = 4 * seg;
    let fs = cfg.sample_rate_hz;
    let trial_seed = cfg
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((class as u64) << 32) | index as u64);
    let mut rng = seeded_rng(trial_seed);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let draw_noise = |rng: &mut crate::math::NesRng| if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };

    let proto = &truth.prototypes[class];
    let mix = &truth.mixing[class];
    let phases: Vec<f64> = (0..CARRIERS_HZ.len())
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let gains: Vec<f64> = (0..CARRIERS_HZ.len()).map(|_| rng.random_range(0.8..1.2)).collect();

    // the class pattern over one segment, per channel
    let mut pattern = Array2::<f64>::zeros((cfg.n_channels, seg));
    for t in 0..seg {
        let env = envelope_at(proto, t as f64 / (seg - 1).max(1) as f64);
        let secs = t as f64 / fs;
        for (s, &f) in CARRIERS_HZ.iter().enumerate() {
            let src = gains[s] * env * (std::f64::consts::TAU * f * secs + phases[s]).sin();
            for ch in 0..cfg.n_channels {
                pattern[[ch, t]] += mix[[ch, s]] * src;
            }
        }
    }

    let (imagined_at, spoken_at) = (2 * seg, 3 * seg);
    let mut channels = Array2::<f64>::zeros((cfg.n_channels, n));
    for ch in 0..cfg.n_channels {
        for t in 0..n {
            let mut v = draw_noise(&mut rng);
            if (imagined_at..spoken_at).contains(&t) {
                v += pattern[[ch, t - imagined_at]];
            } else if t >= spoken_at {
                v += truth.gates[ch] * pattern[[ch, t - spoken_at]];
            }
            channels[[ch, t]] = round_f32(v);
        }
    }

    let speech_len = (seg as f64 * cfg.speech_rate_hz / fs).round() as usize;
    let speech_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let speech = (0..speech_len)
        .map(|t| {
            let env = envelope_at(proto, t as f64 / (speech_len - 1).max(1) as f64);
            let secs = t as f64 / cfg.speech_rate_hz;
            round_f32(env * (std::f64::consts::TAU * SPEECH_CARRIER_HZ * secs + speech_phase).sin())
        })
        .collect();

    let labels = cfg.labels();
    RawRecording {
        participant: "SYN01".into(),
        trial: (class * cfg.trials_per_class + index + 1) as u32,
        channels,
        sample_rate_hz: fs,
        state_marks: [seg, imagined_at, spoken_at],
        speech,
        speech_rate_hz: cfg.speech_rate_hz,
        label: labels[class].clone(),
        class,
    }
}

/// A full synthetic dataset and the structure that generated it.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    let truth = synth_truth(cfg)?;
    let recordings = (0..cfg.n_classes)
        .flat_map(|c| (0..cfg.trials_per_class).map(move |i| (c, i)))
        .map(|(c, i)| synth_trial(cfg, &truth, c, i))
        .collect();
    let ds = Dataset {
        sample_rate_hz: cfg.sample_rate_hz,
        channels: (0..cfg.n_channels).map(|i| format!("S{i:02}")).collect(),
        selected_channels: None,
        labels: cfg.labels(),
        recordings,
    };
    Ok((ds, truth))
}

/// Disjoint train/eval index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Draws exactly `per_label` evaluation items per label, the rest train.
/// Both index lists come back sorted.
pub fn split_eval<S: AsRef<str>>(labels: &[S], per_label: usize, seed: u64) -> Result<Split> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_ref()).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut eval = Vec::new();
    for (label, mut idx) in groups {
        if idx.len() < per_label {
            return Err(NesError::data(format!(
                "label '{label}' has {} trials, fewer than the {per_label} needed for evaluation",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        eval.extend_from_slice(&idx[..per_label]);
    }
    eval.sort_unstable();
    let in_eval: HashSet<usize> = eval.iter().copied().collect();
    let train = (0..labels.len()).filter(|i| !in_eval.contains(i)).collect();
    Ok(Split { train, eval })
}
