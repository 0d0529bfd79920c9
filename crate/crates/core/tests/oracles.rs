mod common;

use common::*;
use nes_core::factored_rbm::{
    delta_e_hidden, delta_e_input, delta_e_visible, energy3, hidden_conditional3,
};
use nes_core::gaussian_rbm::hidden_conditional;
use nes_core::gradcheck::{random_energy_instance, run_all};
use nes_core::model::{ModelShape, Variant};

const INSTANCES: u64 = 24;

#[test]
fn factored_energy_matches_dense_tensor() {
    for seed in 0..INSTANCES {
        let (d, m, k, f) = small_dims(seed);
        let (r, x, y, h) = random_energy_instance(d, m, k, f, seed);
        let w = dense_tensor(&r);
        let dense = dense_energy(&w, &r, x.view(), y.view(), h.view());
        let fast = energy3(x.view(), y.view(), h.view(), &r).unwrap();
        assert!((dense - fast).abs() < 1e-10, "seed {seed}: {dense} vs {fast}");

        let (dh, dy, dx) = dense_drives(&w, &r, x.view(), y.view(), h.view());
        let fh = delta_e_hidden(x.view(), y.view(), &r).unwrap();
        let fy = delta_e_visible(x.view(), h.view(), &r).unwrap();
        let fx = delta_e_input(y.view(), h.view(), &r).unwrap();
        assert!(max_abs_diff(&dh, &fh) < 1e-10, "seed {seed} hidden");
        assert!(max_abs_diff(&dy, &fy) < 1e-10, "seed {seed} visible");
        assert!(max_abs_diff(&dx, &fx) < 1e-10, "seed {seed} input");
    }
}

#[test]
fn gaussian_posterior_matches_enumeration() {
    for k in 1..=8 {
        for seed in 0..3 {
            let (rbm, x) = random_gaussian_rbm(5, k, 100 * k as u64 + seed);
            let brute = brute_posterior(&rbm, x.view());
            let fast = hidden_conditional(x.view(), &rbm).unwrap();
            assert!(max_abs_diff(&brute, &fast) < 1e-10, "K={k} seed {seed}");
        }
    }
}

#[test]
fn factored_posterior_matches_enumeration() {
    for k in 1..=8 {
        for seed in 0..3 {
            let (r, x, y, _) = random_energy_instance(4, 3, k, 5, 200 * k as u64 + seed);
            let brute = brute_posterior3(&r, x.view(), y.view());
            let fast = hidden_conditional3(x.view(), y.view(), &r).unwrap();
            assert!(max_abs_diff(&brute, &fast) < 1e-10, "K={k} seed {seed}");
        }
    }
}

#[test]
fn every_gradient_matches_finite_differences() {
    let shape = ModelShape {
        n_ctx: 3,
        d: 4,
        m_dim: 3,
        k: 5,
        factors: 6,
        l: 4,
        n_classes: 3,
    };
    for v in Variant::ALL {
        let results = run_all(v, &shape, 11, 20).unwrap();
        assert!(!results.is_empty());
        for r in results {
            assert!(r.passed, "{}: {:e} >= {:e}", r.name, r.rel_error, r.tolerance);
        }
    }
}
