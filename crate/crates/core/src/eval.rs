//! Measurement protocol: binary phonological tasks, multi-class confusion,
//! envelope correlation and single-bin spectra.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};

/// The eleven prompts, in canonical order.
pub const PROMPTS: [&str; 11] = [
    "iy", "uw", "piy", "tiy", "diy", "m", "n", "pat", "pot", "knew", "gnaw",
];

/// The seven phonemic (non-word) prompts.
pub const PHONEMIC: [&str; 7] = ["iy", "uw", "piy", "tiy", "diy", "m", "n"];

/// A yes/no question about the prompt, evaluated on trials whose truth lies
/// in `positive ∪ negative`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryTaskSpec {
    pub name: String,
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl BinaryTaskSpec {
    /// A task whose negative set is every label outside `positive`.
    pub fn against_rest(name: &str, positive: &[&str], labels: &[&str]) -> Self {
        let positive: BTreeSet<String> = positive.iter().map(|s| s.to_string()).collect();
        let negative = labels
            .iter()
            .map(|s| s.to_string())
            .filter(|l| !positive.contains(l))
            .collect();
        Self {
            name: name.into(),
            positive,
            negative,
        }
    }

    pub fn validate(&self, labels: &[String]) -> Result<()> {
        if self.positive.is_empty() {
            return Err(NesError::config(format!("task '{}' has no positive labels", self.name)));
        }
        if let Some(shared) = self.positive.intersection(&self.negative).next() {
            return Err(NesError::config(format!(
                "task '{}' lists '{shared}' as both positive and negative",
                self.name
            )));
        }
        if let Some(unknown) = self
            .positive
            .iter()
            .chain(&self.negative)
            .find(|l| !labels.contains(l))
        {
            return Err(NesError::config(format!(
                "task '{}' mentions unknown label '{unknown}'",
                self.name
            )));
        }
        Ok(())
    }

    fn covers(&self, label: &str) -> bool {
        self.positive.contains(label) || self.negative.contains(label)
    }
}

/// Default membership, from the phonetic transcription of each prompt. The
/// consonant/vowel task only considers the seven phonemic prompts.
pub fn default_binary_tasks() -> Vec<BinaryTaskSpec> {
    vec![
        BinaryTaskSpec::against_rest("C/V", &["iy", "uw"], &PHONEMIC),
        BinaryTaskSpec::against_rest("Nasal", &["m", "n", "gnaw", "knew"], &PROMPTS),
        BinaryTaskSpec::against_rest("Bilab", &["m", "piy", "pat", "pot"], &PROMPTS),
        BinaryTaskSpec::against_rest("iy", &["iy", "piy", "tiy", "diy"], &PROMPTS),
        BinaryTaskSpec::against_rest("uw", &["uw", "knew"], &PROMPTS),
    ]
}

#[derive(Deserialize)]
struct TaskEntry {
    name: String,
    positive: Vec<String>,
    /// Omitted means every other known label.
    negative: Option<Vec<String>>,
}

/// Reads a JSON list of `{"name", "positive", "negative"?}` entries.
pub fn load_binary_tasks(path: impl AsRef<Path>, labels: &[String]) -> Result<Vec<BinaryTaskSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NesError::io(path, e))?;
    let entries: Vec<TaskEntry> = serde_json::from_str(&text).map_err(|source| NesError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    entries
        .into_iter()
        .map(|e| {
            let positive: BTreeSet<String> = e.positive.into_iter().collect();
            let negative = match e.negative {
                Some(n) => n.into_iter().collect(),
                None => labels.iter().filter(|l| !positive.contains(*l)).cloned().collect(),
            };
            let spec = BinaryTaskSpec {
                name: e.name,
                positive,
                negative,
            };
            spec.validate(labels)?;
            Ok(spec)
        })
        .collect()
}

/// Fraction of covered trials whose predicted membership matches the truth.
/// Trials whose true label lies outside the task are skipped.
pub fn binary_accuracy<S: AsRef<str>>(
    predictions: &[S],
    truths: &[S],
    spec: &BinaryTaskSpec,
) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(NesError::config(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        let t = t.as_ref();
        if !spec.covers(t) {
            continue;
        }
        total += 1;
        hits += usize::from(spec.positive.contains(p.as_ref()) == spec.positive.contains(t));
    }
    if total == 0 {
        return Err(NesError::data(format!("no trial falls inside task '{}'", spec.name)));
    }
    Ok(hits as f64 / total as f64)
}

/// Keeps only labels present in `labels`, dropping tasks left without a
/// positive or a negative side. Used to apply the default tasks to datasets
/// covering a subset of the prompts.
pub fn restrict_tasks(tasks: &[BinaryTaskSpec], labels: &[String]) -> Vec<BinaryTaskSpec> {
    let keep = |set: &BTreeSet<String>| -> BTreeSet<String> {
        set.iter().filter(|l| labels.contains(l)).cloned().collect()
    };
    tasks
        .iter()
        .map(|t| BinaryTaskSpec {
            name: t.name.clone(),
            positive: keep(&t.positive),
            negative: keep(&t.negative),
        })
        .filter(|t| !t.positive.is_empty() && !t.negative.is_empty())
        .collect()
}

/// Published full-corpus scores, for side-by-side reports.
pub mod reference {
    use crate::model::Variant;

    /// Binary task names in the order of [`binary`].
    pub const TASKS: [&str; 5] = ["C/V", "Nasal", "Bilab", "iy", "uw"];

    pub fn binary(variant: Variant) -> [f64; 5] {
        match variant {
            Variant::I => [0.25, 0.47, 0.53, 0.53, 0.74],
            Variant::B => [0.27, 0.59, 0.52, 0.62, 0.78],
            Variant::G => [0.41, 0.74, 0.71, 0.76, 0.87],
        }
    }

    /// Per-prompt eleven-way accuracy.
    pub fn per_class(variant: Variant) -> [(&'static str, f64); 11] {
        let v = match variant {
            Variant::I => [0.47, 0.28, 0.34, 0.35, 0.27, 0.29, 0.39, 0.41, 0.32, 0.35, 0.31],
            Variant::B => [0.53, 0.37, 0.39, 0.31, 0.42, 0.31, 0.36, 0.46, 0.40, 0.39, 0.35],
            Variant::G => [0.58, 0.43, 0.41, 0.51, 0.39, 0.40, 0.39, 0.45, 0.41, 0.46, 0.33],
        };
        let names = ["uw", "tiy", "iy", "m", "n", "piy", "diy", "gnaw", "pat", "pot", "knew"];
        std::array::from_fn(|i| (names[i], v[i]))
    }

    /// Overall eleven-way accuracy; only NES-G's is published.
    pub fn overall(variant: Variant) -> Option<f64> {
        (variant == Variant::G).then_some(0.415)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Trials per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion(predictions: &[usize], truths: &[usize], labels: &[String]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(NesError::config(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= n || t >= n {
            return Err(NesError::data(format!(
                "class index {} outside the {n} labels",
                p.max(t)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        labels: labels.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Set when either input has zero variance; `value` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation at zero lag.
pub fn cross_correlation(recovered: &[f64], reference: &[f64]) -> Result<Correlation> {
    if recovered.len() != reference.len() {
        return Err(NesError::config(format!(
            "cannot correlate lengths {} and {}",
            recovered.len(),
            reference.len()
        )));
    }
    if recovered.len() < 2 {
        return Err(NesError::config("correlation needs at least two samples"));
    }
    let n = recovered.len() as f64;
    let ma = recovered.iter().sum::<f64>() / n;
    let mb = reference.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in recovered.iter().zip(reference) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Magnitude of the DFT bin nearest `freq_hz`, per channel, using a
/// rectangular window over the whole segment. A unit sine on the bin gives
/// `N/2`.
pub fn spectral_component(
    channels: ArrayView2<f64>,
    sample_rate_hz: f64,
    freq_hz: f64,
) -> Result<Array1<f64>> {
    let n = channels.ncols();
    if n == 0 {
        return Err(NesError::data("cannot take a spectrum of an empty segment"));
    }
    if !(sample_rate_hz > 0.0) || !(0.0..=sample_rate_hz / 2.0).contains(&freq_hz) {
        return Err(NesError::config(format!(
            "frequency {freq_hz} Hz must lie in [0, {}] Hz",
            sample_rate_hz / 2.0
        )));
    }
    let bin = (freq_hz * n as f64 / sample_rate_hz).round();
    let twiddles: Vec<Complex64> = (0..n)
        .map(|t| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * bin * t as f64 / n as f64))
        .collect();
    Ok(channels
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&twiddles).map(|(&x, w)| w * x).sum::<Complex64>().norm())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn labels() -> Vec<String> {
        PROMPTS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_task_membership() {
        let tasks = default_binary_tasks();
        let names: Vec<_> = tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["C/V", "Nasal", "Bilab", "iy", "uw"]);
        for t in &tasks {
            t.validate(&labels()).unwrap();
        }
        assert!(tasks[4].positive.contains("uw"));
        assert!(tasks[3].positive.contains("iy"));
        let cv = &tasks[0];
        let union: BTreeSet<String> = cv.positive.union(&cv.negative).cloned().collect();
        let phonemic: BTreeSet<String> = PHONEMIC.iter().map(|s| s.to_string()).collect();
        assert_eq!(union, phonemic);
        assert!(cv.positive.is_disjoint(&cv.negative));
        for t in &tasks[1..] {
            assert_eq!(t.positive.len() + t.negative.len(), 11);
        }
    }

    #[test]
    fn binary_accuracy_examples() {
        let uw = &default_binary_tasks()[4];
        let truth = ["uw", "knew", "m", "pat"];
        assert_eq!(binary_accuracy(&truth, &truth, uw).unwrap(), 1.0);
        let wrong = ["m", "pat", "uw", "knew"];
        assert_eq!(binary_accuracy(&wrong, &truth, uw).unwrap(), 0.0);
        let three = ["uw", "knew", "m", "uw"];
        assert_eq!(binary_accuracy(&three, &truth, uw).unwrap(), 0.75);
    }

    #[test]
    fn restricting_to_a_label_subset() {
        let sub: Vec<String> = ["iy", "uw", "piy", "tiy"].iter().map(|s| s.to_string()).collect();
        let tasks = restrict_tasks(&default_binary_tasks(), &sub);
        let names: Vec<_> = tasks.iter().map(|t| t.name.as_str()).collect();
        // nasal has no positive prompt among these four
        assert_eq!(names, ["C/V", "Bilab", "iy", "uw"]);
        for t in &tasks {
            t.validate(&sub).unwrap();
        }
        assert_eq!(restrict_tasks(&default_binary_tasks(), &labels()), default_binary_tasks());
    }

    #[test]
    fn reference_tables_cover_every_prompt() {
        for v in crate::model::Variant::ALL {
            let names: BTreeSet<&str> = reference::per_class(v).iter().map(|(n, _)| *n).collect();
            assert_eq!(names, PROMPTS.iter().copied().collect());
        }
        assert_eq!(reference::binary(crate::model::Variant::G)[4], 0.87);
    }

    #[test]
    fn binary_accuracy_skips_uncovered_trials() {
        let cv = &default_binary_tasks()[0];
        let truth = ["iy", "pat", "m"];
        let pred = ["iy", "iy", "m"];
        assert_eq!(binary_accuracy(&pred, &truth, cv).unwrap(), 1.0);
        assert!(binary_accuracy(&["iy"], &["pat"], cv).is_err());
        assert!(binary_accuracy(&["iy"], &[], cv).is_err());
    }

    #[test]
    fn task_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.json");
        std::fs::write(
            &path,
            r#"[{"name": "front", "positive": ["iy", "piy"]},
                {"name": "pair", "positive": ["m"], "negative": ["n"]}]"#,
        )
        .unwrap();
        let tasks = load_binary_tasks(&path, &labels()).unwrap();
        assert_eq!(tasks[0].negative.len(), 9);
        assert_eq!(tasks[1].negative.len(), 1);

        std::fs::write(&path, r#"[{"name": "x", "positive": ["zz"]}]"#).unwrap();
        assert!(matches!(load_binary_tasks(&path, &labels()), Err(NesError::Config(_))));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_binary_tasks(&path, &labels()), Err(NesError::Json { .. })));
    }

    #[test]
    fn confusion_examples() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let perfect = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], &labels).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        assert_eq!(perfect.accuracy(), 1.0);

        let single = confusion(&[1], &[0], &labels).unwrap();
        assert_eq!(single.counts[0][1], 1);
        assert_eq!(single.total(), 1);
        assert_eq!(single.trace(), 0);

        assert!(confusion(&[3], &[0], &labels).is_err());
    }

    #[test]
    fn confusion_accuracy_matches_recount() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let preds: Vec<usize> = (0..100).map(|_| r.random_range(0..11)).collect();
        let truths: Vec<usize> = (0..100).map(|_| r.random_range(0..11)).collect();
        let cm = confusion(&preds, &truths, &labels()).unwrap();
        let recount = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
        assert_eq!(cm.total(), 100);
        assert_eq!(cm.accuracy(), recount as f64 / 100.0);
        let mut per_class = vec![0u64; 11];
        truths.iter().for_each(|&t| per_class[t] += 1);
        assert_eq!(cm.row_sums(), per_class);
    }

    #[test]
    fn correlation_examples() {
        let x = [0.3, -1.2, 2.5, 0.0, 4.1];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let affine: Vec<f64> = x.iter().map(|v| 3.0 * v + 5.0).collect();
        assert_abs_diff_eq!(cross_correlation(&x, &x).unwrap().value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_correlation(&x, &neg).unwrap().value, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_correlation(&x, &affine).unwrap().value, 1.0, epsilon = 1e-12);
        let flat = cross_correlation(&x, &[2.0; 5]).unwrap();
        assert_eq!(flat, Correlation { value: 0.0, degenerate: true });
        assert!(cross_correlation(&x, &x[..4]).is_err());
        assert!(cross_correlation(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spectral_examples() {
        let n = 1000;
        let fs = 1000.0;
        let mut ch = Array2::zeros((3, n));
        for t in 0..n {
            ch[[0, t]] = (2.0 * std::f64::consts::PI * 100.0 * t as f64 / fs).sin();
            ch[[2, t]] = 1.0;
        }
        let mags = spectral_component(ch.view(), fs, 100.0).unwrap();
        assert!((mags[0] - 500.0).abs() < 5.0, "{}", mags[0]);
        assert_eq!(mags[1], 0.0);
        assert!(mags[2] < 1e-9);
        assert!(spectral_component(ch.view(), fs, 600.0).is_err());
    }

    proptest! {
        #[test]
        fn correlation_symmetric_and_bounded(
            pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..40)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = cross_correlation(&a, &b).unwrap();
            let ba = cross_correlation(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.value.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn spectrum_follows_channel_permutation(seed in 0u64..1000) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ch = Array2::from_shape_fn((4, 64), |_| r.random_range(-1.0..1.0));
            let perm = [2usize, 0, 3, 1];
            let permuted = ch.select(ndarray::Axis(0), &perm);
            let a = spectral_component(ch.view(), 256.0, 100.0).unwrap();
            let b = spectral_component(permuted.view(), 256.0, 100.0).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(b[i], a[p]);
            }
        }
    }
}
