//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;

use nes_core::factored_rbm::FactoredRbm;
use nes_core::gaussian_rbm::{energy, GaussianRbm};
use nes_core::math::seeded_rng;

/// The full interaction tensor `W[i, j, k] = Σ_f Wx[i,f] Wy[j,f] Wh[k,f]`.
pub fn dense_tensor(r: &FactoredRbm) -> Array3<f64> {
    let (d, m, k) = (r.n_input(), r.n_visible(), r.n_hidden());
    Array3::from_shape_fn((d, m, k), |(i, j, l)| {
        (0..r.n_factors())
            .map(|f| r.w_fx[[i, f]] * r.w_fy[[j, f]] * r.w_fh[[l, f]])
            .sum()
    })
}

fn scaled(v: ArrayView1<f64>, s: &Array1<f64>) -> Array1<f64> {
    &v / s
}

fn quad(v: ArrayView1<f64>, b: &Array1<f64>, s: &Array1<f64>) -> f64 {
    (0..v.len()).map(|i| (v[i] - b[i]).powi(2) / (2.0 * s[i] * s[i])).sum()
}

pub fn dense_energy(
    w: &Array3<f64>,
    r: &FactoredRbm,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
) -> f64 {
    let (xs, ys) = (scaled(x, &r.sigma_x), scaled(y, &r.sigma_y));
    let mut inter = 0.0;
    for ((i, j, k), wv) in w.indexed_iter() {
        inter += wv * xs[i] * ys[j] * h[k];
    }
    -r.b_h.dot(&h) + quad(y, &r.b_y, &r.sigma_y) + quad(x, &r.b_x, &r.sigma_x) - inter
}

/// Hidden, visible and input drives contracted directly from the dense tensor.
pub fn dense_drives(
    w: &Array3<f64>,
    r: &FactoredRbm,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let (xs, ys) = (scaled(x, &r.sigma_x), scaled(y, &r.sigma_y));
    let mut dh = r.b_h.clone();
    let mut dy = r.b_y.clone();
    let mut dx = r.b_x.clone();
    for ((i, j, k), wv) in w.indexed_iter() {
        dh[k] += wv * xs[i] * ys[j];
        dy[j] += wv * xs[i] * h[k];
        dx[i] += wv * ys[j] * h[k];
    }
    (dh, dy, dx)
}

/// Every binary vector of length `k`, bit `b` of the index giving unit `b`.
pub fn all_states(k: usize) -> Vec<Array1<f64>> {
    (0..1usize << k)
        .map(|s| Array1::from_shape_fn(k, |b| ((s >> b) & 1) as f64))
        .collect()
}

/// Marginals `p(h_k = 1)` of the Boltzmann distribution over `neg_energies`.
pub fn enumerate_marginals(states: &[Array1<f64>], neg_energies: &[f64]) -> Array1<f64> {
    let top = neg_energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = neg_energies.iter().map(|e| (e - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut out = Array1::zeros(states[0].len());
    for (s, w) in states.iter().zip(&weights) {
        out.scaled_add(*w / z, s);
    }
    out
}

pub fn brute_posterior(rbm: &GaussianRbm, x: ArrayView1<f64>) -> Array1<f64> {
    let states = all_states(rbm.n_hidden());
    let neg: Vec<f64> = states
        .iter()
        .map(|h| -energy(x, h.view(), rbm).unwrap())
        .collect();
    enumerate_marginals(&states, &neg)
}

pub fn brute_posterior3(r: &FactoredRbm, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let states = all_states(r.n_hidden());
    let neg: Vec<f64> = states
        .iter()
        .map(|h| -nes_core::factored_rbm::energy3(x, y, h.view(), r).unwrap())
        .collect();
    enumerate_marginals(&states, &neg)
}

pub fn random_gaussian_rbm(d: usize, k: usize, seed: u64) -> (GaussianRbm, Array1<f64>) {
    let mut rng = seeded_rng(seed);
    let mut u = |n: usize, lo: f64, hi: f64| Array1::from_shape_fn(n, |_| rng.random_range(lo..hi));
    let rbm = GaussianRbm {
        b_h: u(k, -1.0, 1.0),
        b_x: u(d, -1.0, 1.0),
        sigma: u(d, 0.5, 1.5),
        w: Array2::zeros((d, k)),
    };
    let x = u(d, -2.0, 2.0);
    let w = Array2::from_shape_fn((d, k), |_| rng.random_range(-1.0..1.0));
    (GaussianRbm { w, ..rbm }, x)
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small random dimensions within the oracle limits.
pub fn small_dims(seed: u64) -> (usize, usize, usize, usize) {
    let mut rng = seeded_rng(seed ^ 0x5eed);
    (
        rng.random_range(1..=6),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
        rng.random_range(1..=8),
    )
}
