//! Joint CD and supervised training of one model variant on synthetic data,
//! followed by a save/load round trip.
//!
//! cargo run --release --example train_nes [-- nes-i|nes-b|nes-g [EPOCHS]]

use nes_core::data::{split_eval, synth_generate, SynthConfig};
use nes_core::math::seeded_rng;
use nes_core::model::{train_joint, ModelShape, NesModel, Objective, TrainConfig, Variant};
use nes_core::model_io::{load_model, save_model};
use nes_core::preprocess::PreprocessConfig;

fn main() -> nes_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("nes-g").parse()?;
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);

    let (ds, _) = synth_generate(&SynthConfig {
        trials_per_class: 80,
        seed: 1,
        ..SynthConfig::default()
    })?;
    let feats = ds.features(&PreprocessConfig::default())?;
    let split = split_eval(&ds.class_labels(), 20, 2)?;
    let train: Vec<_> = split.train.iter().map(|&i| feats[i].clone()).collect();

    let shape = ModelShape::for_tuple(&train[0], 50, ds.labels.len());
    let mut model = NesModel::new(variant, &shape, &mut seeded_rng(3))?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        objective: Objective::Classify,
        seed: 4,
        ..TrainConfig::for_variant(variant)
    };
    println!("{variant}: lr {}, CD rate {}, {} training trials", cfg.lr, cfg.cd_lr(), train.len());
    let history = train_joint(&mut model, &train, &cfg)?;
    for m in history.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:>3}: loss {:.4}, recon {:.3}, train accuracy {:.3}",
            m.epoch,
            m.loss,
            m.recon_error,
            m.accuracy.unwrap_or(f64::NAN)
        );
    }

    let hits = split.eval.iter().filter(|&&i| model.classify(&feats[i]).map(|(c, _)| c == feats[i].class).unwrap_or(false)).count();
    println!("held-out accuracy {:.3}", hits as f64 / split.eval.len() as f64);

    let path = std::env::temp_dir().join(format!("{variant}.nesm"));
    save_model(&model, &path)?;
    println!("saved to {}, reload identical: {}", path.display(), load_model(&path)? == model);
    Ok(())
}
