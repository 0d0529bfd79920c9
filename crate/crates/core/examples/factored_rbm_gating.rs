//! A factored three-way RBM learning `p(y | x)` on gated data, then the effect
//! of the barrier on negative factor weights.
//!
//! cargo run --release --example factored_rbm_gating

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use nes_core::factored_rbm::{barrier_penalty, cd_update3, negative_weight_count, Cd3Params, FactoredRbm, FactoredVelocity};
use nes_core::math::seeded_rng;

fn train(xs: &Array2<f64>, ys: &Array2<f64>, params: &Cd3Params, epochs: usize) -> nes_core::Result<(FactoredRbm, Vec<f64>)> {
    let mut r = seeded_rng(3);
    let mut frbm = FactoredRbm::new(xs.ncols(), ys.ncols(), 6, 8, &mut r);
    let mut vel = FactoredVelocity::zeros_like(&frbm);
    let mut errs = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        errs.push(cd_update3(xs.view(), ys.view(), &mut frbm, params, &mut vel, &mut r)?.recon_error);
    }
    Ok((frbm, errs))
}

fn main() -> nes_core::Result<()> {
    let mut rng = seeded_rng(2);
    let (dim, n) = (8, 200);

    // y copies x through a per-dimension gain
    let gain: Vec<f64> = (0..dim).map(|j| if j % 2 == 0 { 1.5 } else { 0.3 }).collect();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let xs = Array2::from_shape_fn((n, dim), |_| rng.random_range(0.0..1.0));
    let ys = Array2::from_shape_fn((n, dim), |(s, j)| gain[j] * xs[[s, j]] + noise.sample(&mut rng));
    let params = Cd3Params {
        lr: 0.01,
        ..Cd3Params::default()
    };
    let (_, errs) = train(&xs, &ys, &params, 300)?;
    for e in (0..300).step_by(50).chain([299]) {
        println!("epoch {e:>3}: reconstruction error {:.4}", errs[e]);
    }

    // zero-mean, unrelated x and y pull factor weights both ways
    let xs = Array2::from_shape_fn((64, dim), |_| rng.random_range(-1.0..1.0));
    let ys = Array2::from_shape_fn((64, dim), |_| rng.random_range(-1.0..1.0));
    for alpha in [0.0, 10.0] {
        let params = Cd3Params {
            lr: 0.5,
            alpha,
            ..Cd3Params::default()
        };
        let (frbm, _) = train(&xs, &ys, &params, 100)?;
        let (penalty, _) = barrier_penalty(&frbm, 1.0);
        println!(
            "alpha {alpha:>4}: {:>3} negative factor weights, half squared negative mass {penalty:.2e}",
            negative_weight_count(&frbm)
        );
    }
    Ok(())
}
