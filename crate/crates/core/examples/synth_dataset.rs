//! Generates a synthetic dataset, writes it in the on-disk format, reads it
//! back and draws an evaluation split.
//!
//! cargo run --example synth_dataset [-- OUT_DIR]

use nes_core::data::{load_dataset, split_eval, synth_generate, write_dataset, SynthConfig};
use nes_core::eval::cross_correlation;

fn main() -> nes_core::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nes_synth"));
    let cfg = SynthConfig {
        n_classes: 11,
        trials_per_class: 6,
        seed: 4,
        ..SynthConfig::default()
    };
    let (ds, truth) = synth_generate(&cfg)?;
    let manifest = write_dataset(&out, &ds)?;
    println!("wrote {} trials to {}", ds.recordings.len(), manifest.display());

    let back = load_dataset(&manifest)?;
    println!("labels: {:?}", back.labels);
    println!("reloaded {} trials, identical: {}", back.recordings.len(), back == ds);

    let mut worst: f64 = -1.0;
    for a in 0..truth.prototypes.len() {
        for b in a + 1..truth.prototypes.len() {
            worst = worst.max(cross_correlation(&truth.prototypes[a], &truth.prototypes[b])?.value);
        }
    }
    println!("largest correlation between class prototypes {worst:.3}");

    let split = split_eval(&back.class_labels(), 2, 0)?;
    println!("split: {} train, {} eval", split.train.len(), split.eval.len());
    Ok(())
}
