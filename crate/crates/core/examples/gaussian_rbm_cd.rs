//! Contrastive divergence on a Gaussian-Bernoulli RBM.
//!
//! Data are noisy copies of three prototypes; the reconstruction error falls
//! as the hidden units pick them up.
//!
//! cargo run --example gaussian_rbm_cd

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use nes_core::gaussian_rbm::{cd_update, free_energy, hidden_conditional, CdParams, GaussianRbm, RbmVelocity};
use nes_core::math::seeded_rng;

fn main() -> nes_core::Result<()> {
    let mut rng = seeded_rng(1);
    let (d, k, n) = (12, 6, 300);
    let protos = Array2::from_shape_fn((3, d), |_| if rng.random::<f64>() < 0.5 { 2.0 } else { -2.0 });
    let noise = Normal::new(0.0, 0.3).unwrap();
    let data = Array2::from_shape_fn((n, d), |(s, j)| protos[[s % 3, j]] + noise.sample(&mut rng));

    let mut rbm = GaussianRbm::new(d, k, &mut rng);
    let mut vel = RbmVelocity::zeros_like(&rbm);
    let params = CdParams {
        lr: 0.01,
        ..CdParams::default()
    };
    for epoch in 0..=60 {
        let stats = cd_update(data.view(), &mut rbm, &params, &mut vel, &mut rng)?;
        if epoch % 10 == 0 {
            println!("epoch {epoch:>2}: reconstruction error {:.3}", stats.recon_error);
        }
    }
    for (i, p) in protos.rows().into_iter().enumerate() {
        let h = hidden_conditional(p, &rbm)?;
        println!("prototype {i}: F = {:8.3}, p(h|x) = {:.2}", free_energy(p, &rbm)?, h);
    }
    Ok(())
}
