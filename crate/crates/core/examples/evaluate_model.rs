//! Evaluation protocol on an eleven-prompt synthetic set: confusion matrix,
//! binary phonological tasks and envelope correlation.
//!
//! cargo run --release --example evaluate_model

use nes_core::data::{split_eval, synth_generate, SynthConfig};
use nes_core::eval::{binary_accuracy, confusion, cross_correlation, default_binary_tasks};
use nes_core::math::seeded_rng;
use nes_core::model::{train_joint, ModelShape, NesModel, Objective, TrainConfig, Variant};
use nes_core::preprocess::PreprocessConfig;

fn main() -> nes_core::Result<()> {
    let (ds, _) = synth_generate(&SynthConfig {
        n_classes: 11,
        trials_per_class: 30,
        noise: 0.3,
        seed: 6,
        ..SynthConfig::default()
    })?;
    let feats = ds.features(&PreprocessConfig::default())?;
    let split = split_eval(&ds.class_labels(), 10, 0)?;
    let train: Vec<_> = split.train.iter().map(|&i| feats[i].clone()).collect();

    // one model per objective: the softmax head and envelope recovery
    let shape = ModelShape::for_tuple(&train[0], 50, ds.labels.len());
    let fit = |objective| -> nes_core::Result<NesModel> {
        let mut model = NesModel::new(Variant::B, &shape, &mut seeded_rng(7))?;
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 32,
            objective,
            seed: 8,
            ..TrainConfig::for_variant(Variant::B)
        };
        train_joint(&mut model, &train, &cfg)?;
        Ok(model)
    };
    let classifier = fit(Objective::Classify)?;
    let recoverer = fit(Objective::Envelope)?;

    let mut preds = Vec::new();
    let mut corr = Vec::new();
    for &i in &split.eval {
        preds.push(classifier.classify(&feats[i])?.0);
        let rec = recoverer.recover_envelope(&feats[i])?;
        corr.push(cross_correlation(rec.as_slice().unwrap(), feats[i].target.as_slice().unwrap())?.value);
    }
    let truths: Vec<usize> = split.eval.iter().map(|&i| feats[i].class).collect();
    let cm = confusion(&preds, &truths, &ds.labels)?;
    println!("11-way accuracy {:.3} ({} / {})", cm.accuracy(), cm.trace(), cm.total());
    for (label, row) in cm.labels.iter().zip(&cm.counts) {
        println!("{label:>5} {row:?}");
    }

    let names = |v: &[usize]| v.iter().map(|&c| ds.labels[c].clone()).collect::<Vec<_>>();
    let (p, t) = (names(&preds), names(&truths));
    for task in default_binary_tasks() {
        println!("{:>6}: {:.3}", task.name, binary_accuracy(&p, &t, &task)?);
    }
    println!("mean envelope correlation {:.3}", corr.iter().sum::<f64>() / corr.len() as f64);
    Ok(())
}
