//! Conditions one synthetic recording and reduces it to model inputs.
//!
//! cargo run --example preprocess_trial

use nes_core::data::{synth_generate, SynthConfig};
use nes_core::preprocess::{prepare_trial, trial_to_features, window_count, PreprocessConfig};

fn main() -> nes_core::Result<()> {
    let (ds, _) = synth_generate(&SynthConfig {
        trials_per_class: 1,
        ..SynthConfig::default()
    })?;
    let rec = &ds.recordings[0];
    println!(
        "{}: {} channels x {} samples at {} Hz, label {}",
        rec.describe(),
        rec.n_channels(),
        rec.n_samples(),
        rec.sample_rate_hz,
        rec.label
    );

    let cfg = PreprocessConfig::default();
    let trial = prepare_trial(rec, &cfg)?;
    let native = window_count(trial.imagined.ncols(), 20, 10);
    println!(
        "imagined segment {:?}, spoken segment {:?}, {native} native windows",
        trial.imagined.dim(),
        trial.spoken.dim()
    );

    let f = trial_to_features(&trial, rec.sample_rate_hz, &cfg)?;
    println!("context features {:?}, spoken vector {}, envelope {}", f.xs.dim(), f.y.len(), f.target.len());
    let peak = f.target.iter().copied().fold(0.0, f64::max);
    println!("envelope peak {peak:.3}, first values {:.3?}", &f.target.as_slice().unwrap()[..5]);
    Ok(())
}
