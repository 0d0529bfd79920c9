//! Batch command-line front end.
//!
//! Each command writes its outputs under `--out`. Reports are JSON and hold
//! nothing that differs between two runs with the same flags, so they can be
//! compared byte for byte; wall-clock time goes to a separate `timing.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset_with, split_eval, synth_generate, write_dataset, ChannelSelection, Dataset, SynthConfig};
use crate::error::{NesError, Result};
use crate::eval::{
    binary_accuracy, confusion, cross_correlation, default_binary_tasks, load_binary_tasks, reference,
    restrict_tasks, BinaryTaskSpec, ConfusionMatrix, PROMPTS,
};
use crate::gradcheck::{run_all, CheckResult};
use crate::math::seeded_rng;
use crate::model::{train_joint, EpochMetrics, ModelShape, NesModel, Objective, TrainConfig, Variant};
use crate::model_io::{load_model, save_model};
use crate::preprocess::{FeatureTuple, PreprocessConfig};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const MODEL_FILE: &str = "model.nesm";
pub const ENVELOPES_FILE: &str = "envelopes.json";
pub const SYNTH_CONFIG_FILE: &str = "synth.json";

#[derive(Debug, Parser)]
#[command(name = "nes", version, about = "Energy-based EEG-to-speech models: train, evaluate, recover envelopes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write model.nesm plus report.json.
    Train(TrainArgs),
    /// Binary and multi-class metrics of a trained model.
    Eval(EvalArgs),
    /// Recovered speech envelopes and their correlation with the reference.
    Recover(RecoverArgs),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    All,
    Selected,
}

impl From<Channels> for ChannelSelection {
    fn from(c: Channels) -> Self {
        match c {
            Channels::All => ChannelSelection::All,
            Channels::Selected => ChannelSelection::Selected,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Use every channel or only the manifest's selected subset.
    #[arg(long, value_enum, default_value_t = Channels::Selected)]
    pub channels: Channels,
    /// Trials per label held out for evaluation; 0 evaluates on every trial.
    #[arg(long, default_value_t = 0)]
    pub eval_per_label: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long = "n-channels")]
    pub n_channels: Option<usize>,
    #[arg(long)]
    pub trials_per_class: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub gate_strength: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// nes-i, nes-b or nes-g.
    #[arg(long, default_value = "nes-i")]
    pub variant: Variant,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Supervised learning rate (default 0.1, or 0.02 for nes-g).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Contrastive divergence rate (default lr / 20).
    #[arg(long)]
    pub cd_lr: Option<f64>,
    /// Cap on the nes-g CD gradient norm (default 5; 0 disables).
    #[arg(long)]
    pub cd_max_norm: Option<f64>,
    #[arg(long)]
    pub cd_steps: Option<usize>,
    /// Barrier strength on negative factor weights (nes-g).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// classify (softmax cross-entropy) or envelope (mean squared error).
    #[arg(long, default_value = "classify")]
    pub objective: Objective,
    /// Feature dimension D.
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    /// Hidden units K (also the factor count of nes-g).
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    /// JSON list of binary tasks replacing the defaults.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Check a single variant; all three when omitted.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub n_ctx: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub hidden: usize,
    #[arg(long, default_value_t = 6)]
    pub factors: usize,
    #[arg(long, default_value_t = 4)]
    pub l: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Directory for report.json; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub n_trials: usize,
    /// Fraction of this class's trials predicted correctly.
    pub accuracy: Option<f64>,
    pub mean_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub name: String,
    pub n_trials: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// "eval" for the held-out split, "all" otherwise.
    pub subset: String,
    pub n_trials: usize,
    pub accuracy: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub per_class: Vec<ClassScore>,
    pub binary: Vec<BinaryScore>,
    /// Mean correlation between recovered and reference envelopes.
    pub mean_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub name: String,
    pub measured: Option<f64>,
    pub published: f64,
}

/// Side-by-side view against the published full-corpus scores; present when
/// the dataset's labels are drawn from the eleven prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub binary: Vec<ScorePair>,
    pub per_class: Vec<ScorePair>,
    pub overall: Option<ScorePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub eval_per_label: usize,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub command: String,
    pub variant: Variant,
    pub seed: u64,
    pub manifest: String,
    pub channels: Channels,
    pub preprocess: PreprocessConfig,
    pub shape: ModelShape,
    pub config: TrainConfig,
    pub split: SplitInfo,
    pub epochs: Vec<EpochMetrics>,
    pub metrics: Metrics,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub command: String,
    pub variant: Variant,
    pub model: String,
    pub manifest: String,
    pub channels: Channels,
    pub split: SplitInfo,
    pub metrics: Metrics,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredTrial {
    pub participant: String,
    pub trial: u32,
    pub label: String,
    pub recovered: Vec<f64>,
    pub reference: Vec<f64>,
    pub correlation: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverReport {
    pub command: String,
    pub variant: Variant,
    pub model: String,
    pub manifest: String,
    pub split: SplitInfo,
    pub per_class: Vec<ClassScore>,
    pub mean_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub command: String,
    pub seed: u64,
    pub instances: usize,
    pub shape: ModelShape,
    pub checks: Vec<CheckResult>,
    pub failed: usize,
}

#[derive(Serialize)]
struct Timing<'a> {
    command: &'a str,
    seconds: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for runtime or data errors, 2 for
/// usage and configuration errors.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let (name, out) = match &cli.command {
        Command::Synth(a) => {
            let manifest = cmd_synth(a)?;
            println!("wrote {}", manifest.display());
            ("synth", Some(&a.out))
        }
        Command::Train(a) => {
            let r = cmd_train(a)?;
            let last = r.epochs.last();
            println!(
                "{} trained for {} epochs: final loss {:.4}, {} accuracy {}",
                r.variant,
                r.epochs.len(),
                last.map_or(f64::NAN, |e| e.loss),
                r.metrics.subset,
                fmt_opt(r.metrics.accuracy)
            );
            ("train", Some(&a.out))
        }
        Command::Eval(a) => {
            let r = cmd_eval(a)?;
            println!("accuracy {} over {} trials", fmt_opt(r.metrics.accuracy), r.metrics.n_trials);
            for b in &r.metrics.binary {
                println!("  {:<6} {}", b.name, fmt_opt(b.accuracy));
            }
            ("eval", Some(&a.out))
        }
        Command::Recover(a) => {
            let r = cmd_recover(a)?;
            println!("mean envelope correlation {}", fmt_opt(r.mean_correlation));
            ("recover", Some(&a.out))
        }
        Command::Gradcheck(a) => {
            let r = cmd_gradcheck(a)?;
            for c in &r.checks {
                if !c.passed {
                    println!("FAIL {:<40} {:.3e} (tolerance {:.0e})", c.name, c.rel_error, c.tolerance);
                }
            }
            let worst = r.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
            println!("{} checks, {} failed, worst relative error {worst:.3e}", r.checks.len(), r.failed);
            if r.failed > 0 {
                return Err(NesError::Data(format!("{} gradient checks failed", r.failed)));
            }
            ("gradcheck", a.out.as_ref())
        }
    };
    if let Some(dir) = out {
        let timing = Timing {
            command: name,
            seconds: start.elapsed().as_secs_f64(),
        };
        write_json(&dir.join(TIMING_FILE), &timing)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| NesError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| NesError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NesError::io(path, e))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| NesError::io(path, e))?;
            serde_json::from_str(&text).map_err(|source| NesError::Json {
                path: path.clone(),
                source,
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = args.classes {
        cfg.n_classes = v;
    }
    if let Some(v) = args.n_channels {
        cfg.n_channels = v;
    }
    if let Some(v) = args.trials_per_class {
        cfg.trials_per_class = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.gate_strength {
        cfg.gate_strength = v;
    }
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let (ds, _) = synth_generate(&cfg)?;
    let manifest = write_dataset(&args.out, &ds)?;
    write_json(&args.out.join(SYNTH_CONFIG_FILE), &cfg)?;
    Ok(manifest)
}

/// A loaded dataset reduced to features, with the train/eval partition.
struct Prepared {
    ds: Dataset,
    feats: Vec<FeatureTuple>,
    train: Vec<usize>,
    eval: Vec<usize>,
    split: SplitInfo,
}

fn prepare(data: &DataArgs, pre: &PreprocessConfig) -> Result<Prepared> {
    let ds = load_dataset_with(&data.manifest, data.channels.into())?;
    if ds.recordings.is_empty() {
        return Err(NesError::data(format!("{} lists no trials", data.manifest.display())));
    }
    let feats = ds.features(pre)?;
    let (train, eval) = if data.eval_per_label == 0 {
        let all: Vec<usize> = (0..feats.len()).collect();
        (all.clone(), all)
    } else {
        let s = split_eval(&ds.class_labels(), data.eval_per_label, data.split_seed)?;
        (s.train, s.eval)
    };
    let split = SplitInfo {
        eval_per_label: data.eval_per_label,
        split_seed: data.split_seed,
        n_train: train.len(),
        n_eval: eval.len(),
    };
    Ok(Prepared {
        ds,
        feats,
        train,
        eval,
        split,
    })
}

fn tasks_for(path: Option<&Path>, labels: &[String]) -> Result<Vec<BinaryTaskSpec>> {
    match path {
        Some(p) => load_binary_tasks(p, labels),
        None => Ok(restrict_tasks(&default_binary_tasks(), labels)),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Classification and envelope metrics of `model` over `indices`.
fn measure(
    model: &NesModel,
    p: &Prepared,
    indices: &[usize],
    tasks: &[BinaryTaskSpec],
    subset: &str,
) -> Result<Metrics> {
    let labels = &p.ds.labels;
    let truths: Vec<usize> = indices.iter().map(|&i| p.feats[i].class).collect();
    let mut corr_by_class = vec![Vec::new(); labels.len()];
    for &i in indices {
        let t = &p.feats[i];
        let rec = model.recover_envelope(t)?;
        let c = cross_correlation(rec.as_slice().expect("contiguous"), t.target.as_slice().expect("contiguous"))?;
        corr_by_class[t.class].push(c.value);
    }
    let all_corr: Vec<f64> = corr_by_class.iter().flatten().copied().collect();

    let (accuracy, cm, binary) = if model.head.is_some() {
        let preds = indices
            .iter()
            .map(|&i| model.classify(&p.feats[i]).map(|(c, _)| c))
            .collect::<Result<Vec<_>>>()?;
        let cm = confusion(&preds, &truths, labels)?;
        let pred_names: Vec<&str> = preds.iter().map(|&c| labels[c].as_str()).collect();
        let true_names: Vec<&str> = truths.iter().map(|&c| labels[c].as_str()).collect();
        let binary = tasks
            .iter()
            .map(|t| BinaryScore {
                name: t.name.clone(),
                n_trials: true_names
                    .iter()
                    .filter(|l| t.positive.contains(**l) || t.negative.contains(**l))
                    .count(),
                accuracy: binary_accuracy(&pred_names, &true_names, t).ok(),
            })
            .collect();
        (Some(cm.accuracy()), Some(cm), binary)
    } else {
        (None, None, Vec::new())
    };

    let per_class = labels
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let n = truths.iter().filter(|&&t| t == c).count();
            ClassScore {
                label: label.clone(),
                n_trials: n,
                accuracy: cm
                    .as_ref()
                    .filter(|_| n > 0)
                    .map(|m| m.counts[c][c] as f64 / n as f64),
                mean_correlation: mean(&corr_by_class[c]),
            }
        })
        .collect();
    Ok(Metrics {
        subset: subset.into(),
        n_trials: indices.len(),
        accuracy,
        confusion: cm,
        per_class,
        binary,
        mean_correlation: mean(&all_corr),
    })
}

fn compare(variant: Variant, labels: &[String], m: &Metrics) -> Option<Comparison> {
    if m.accuracy.is_none() || !labels.iter().all(|l| PROMPTS.contains(&l.as_str())) {
        return None;
    }
    let binary = reference::TASKS
        .iter()
        .zip(reference::binary(variant))
        .map(|(name, published)| ScorePair {
            name: name.to_string(),
            measured: m.binary.iter().find(|b| b.name == *name).and_then(|b| b.accuracy),
            published,
        })
        .collect();
    let per_class = reference::per_class(variant)
        .iter()
        .map(|&(name, published)| ScorePair {
            name: name.into(),
            measured: m.per_class.iter().find(|c| c.label == name).and_then(|c| c.accuracy),
            published,
        })
        .collect();
    let overall = reference::overall(variant).map(|published| ScorePair {
        name: "overall".into(),
        measured: m.accuracy,
        published,
    });
    Some(Comparison {
        binary,
        per_class,
        overall,
    })
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let mut cfg = TrainConfig::for_variant(a.variant);
    cfg.seed = a.seed;
    cfg.objective = a.objective;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if a.cd_lr.is_some() {
        cfg.cd_lr = a.cd_lr;
    }
    if let Some(v) = a.cd_max_norm {
        cfg.cd_max_norm = (v != 0.0).then_some(v);
    }
    if let Some(v) = a.cd_steps {
        cfg.cd_steps = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    cfg
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainReport> {
    let cfg = train_config(a);
    cfg.validate()?;
    let pre = PreprocessConfig {
        d: a.d,
        ..PreprocessConfig::default()
    };
    let p = prepare(&a.data, &pre)?;
    let tasks = tasks_for(a.tasks.as_deref(), &p.ds.labels)?;
    let train: Vec<FeatureTuple> = p.train.iter().map(|&i| p.feats[i].clone()).collect();
    let shape = ModelShape::for_tuple(&train[0], a.hidden, p.ds.labels.len());
    let mut model = NesModel::new(a.variant, &shape, &mut seeded_rng(a.seed))?;
    let epochs = train_joint(&mut model, &train, &cfg)?;

    std::fs::create_dir_all(&a.out).map_err(|e| NesError::io(&a.out, e))?;
    save_model(&model, a.out.join(MODEL_FILE))?;
    let subset = if a.data.eval_per_label > 0 { "eval" } else { "all" };
    let metrics = measure(&model, &p, &p.eval, &tasks, subset)?;
    let report = TrainReport {
        command: "train".into(),
        variant: a.variant,
        seed: a.seed,
        manifest: a.data.manifest.display().to_string(),
        channels: a.data.channels,
        preprocess: pre,
        shape,
        comparison: compare(a.variant, &p.ds.labels, &metrics),
        config: cfg,
        split: p.split.clone(),
        epochs,
        metrics,
    };
    write_json(&a.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Feature settings matching a trained model's input sizes.
fn preprocess_for(model: &NesModel) -> PreprocessConfig {
    let s = model.shape();
    PreprocessConfig {
        d: s.d,
        l: (s.l != s.d).then_some(s.l),
        ..PreprocessConfig::default()
    }
}

fn check_fits(model: &NesModel, p: &Prepared) -> Result<()> {
    let s = model.shape();
    let t = &p.feats[0];
    if t.xs.nrows() != s.n_ctx {
        return Err(NesError::config(format!(
            "model expects {} channels but the dataset provides {} (check --channels)",
            s.n_ctx,
            t.xs.nrows()
        )));
    }
    if s.n_classes > 0 && s.n_classes != p.ds.labels.len() {
        return Err(NesError::config(format!(
            "model has {} classes but the dataset lists {} labels",
            s.n_classes,
            p.ds.labels.len()
        )));
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let model = load_model(&a.model)?;
    let p = prepare(&a.data, &preprocess_for(&model))?;
    check_fits(&model, &p)?;
    let tasks = tasks_for(a.tasks.as_deref(), &p.ds.labels)?;
    let subset = if a.data.eval_per_label > 0 { "eval" } else { "all" };
    let metrics = measure(&model, &p, &p.eval, &tasks, subset)?;
    let report = EvalReport {
        command: "eval".into(),
        variant: model.variant,
        model: a.model.display().to_string(),
        manifest: a.data.manifest.display().to_string(),
        channels: a.data.channels,
        split: p.split.clone(),
        comparison: compare(model.variant, &p.ds.labels, &metrics),
        metrics,
    };
    write_json(&a.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn cmd_recover(a: &RecoverArgs) -> Result<RecoverReport> {
    let model = load_model(&a.model)?;
    let p = prepare(&a.data, &preprocess_for(&model))?;
    check_fits(&model, &p)?;
    let mut trials = Vec::with_capacity(p.eval.len());
    for &i in &p.eval {
        let (rec, t) = (&p.ds.recordings[i], &p.feats[i]);
        let recovered = model.recover_envelope(t)?.to_vec();
        let reference = t.target.to_vec();
        let c = cross_correlation(&recovered, &reference)?;
        trials.push(RecoveredTrial {
            participant: rec.participant.clone(),
            trial: rec.trial,
            label: rec.label.clone(),
            recovered,
            reference,
            correlation: c.value,
            degenerate: c.degenerate,
        });
    }
    let per_class = p
        .ds
        .labels
        .iter()
        .map(|label| {
            let values: Vec<f64> = trials.iter().filter(|t| &t.label == label).map(|t| t.correlation).collect();
            ClassScore {
                label: label.clone(),
                n_trials: values.len(),
                accuracy: None,
                mean_correlation: mean(&values),
            }
        })
        .collect();
    let all: Vec<f64> = trials.iter().map(|t| t.correlation).collect();
    let report = RecoverReport {
        command: "recover".into(),
        variant: model.variant,
        model: a.model.display().to_string(),
        manifest: a.data.manifest.display().to_string(),
        split: p.split.clone(),
        per_class,
        mean_correlation: mean(&all),
    };
    write_json(&a.out.join(ENVELOPES_FILE), &trials)?;
    write_json(&a.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<GradcheckReport> {
    let shape = ModelShape {
        n_ctx: a.n_ctx,
        d: a.d,
        m_dim: a.m,
        k: a.hidden,
        factors: a.factors,
        l: a.l,
        n_classes: a.classes,
    };
    let variants = match a.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut checks = Vec::new();
    for v in variants {
        shape.validate(v)?;
        checks.extend(run_all(v, &shape, a.seed, a.instances)?);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = GradcheckReport {
        command: "gradcheck".into(),
        seed: a.seed,
        instances: a.instances,
        shape,
        checks,
        failed,
    };
    if let Some(dir) = &a.out {
        write_json(&dir.join(REPORT_FILE), &report)?;
    }
    Ok(report)
}
