//! Gaussian-Bernoulli RBM used as the middle layer of NES-I and NES-B.
//!
//! Energy, with visible units scaled by their standard deviations:
//!
//! ```text
//! E(x, h) = Σ_j (x_j - bx_j)² / 2σ_j²  -  Σ_jk (x_j/σ_j) W_jk h_k  -  Σ_k bh_k h_k
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NesError, Result};
use crate::math::{add_outer, check_len, momentum_step, sigmoid, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRbm {
    /// `D x K`.
    pub w: Array2<f64>,
    pub b_h: Array1<f64>,
    pub b_x: Array1<f64>,
    /// Per-visible standard deviations; held fixed during training.
    pub sigma: Array1<f64>,
}

impl GaussianRbm {
    /// `W ~ N(0, 0.01²)`, zero biases, unit standard deviations.
    pub fn new(d: usize, k: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        Self {
            w: Array2::from_shape_fn((d, k), |_| normal.sample(rng)),
            b_h: Array1::zeros(k),
            b_x: Array1::zeros(d),
            sigma: Array1::ones(d),
        }
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            w: Array2::zeros((d, k)),
            b_h: Array1::zeros(k),
            b_x: Array1::zeros(d),
            sigma: Array1::ones(d),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = self.w.dim();
        check_len("hidden bias", self.b_h.len(), k)?;
        check_len("visible bias", self.b_x.len(), d)?;
        check_len("sigma", self.sigma.len(), d)?;
        if self.sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(NesError::config("standard deviations must be positive and finite"));
        }
        let finite = self
            .w
            .iter()
            .chain(self.b_h.iter())
            .chain(self.b_x.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(NesError::config("RBM parameters must be finite"));
        }
        Ok(())
    }

    /// Hidden pre-activations `ΔE_k = Σ_j (x_j/σ_j) W_jk + bh_k`.
    pub fn hidden_input(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("visible vector", x.len(), self.n_visible())?;
        let scaled = &x / &self.sigma;
        Ok(scaled.dot(&self.w) + &self.b_h)
    }
}

fn check_binary(h: ArrayView1<f64>) -> Result<()> {
    if h.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(NesError::data("hidden state must be binary"))
    }
}

pub fn energy(x: ArrayView1<f64>, h: ArrayView1<f64>, rbm: &GaussianRbm) -> Result<f64> {
    check_len("visible vector", x.len(), rbm.n_visible())?;
    check_len("hidden vector", h.len(), rbm.n_hidden())?;
    check_binary(h)?;
    let quad: f64 = x
        .iter()
        .zip(&rbm.b_x)
        .zip(&rbm.sigma)
        .map(|((x, b), s)| (x - b).powi(2) / (2.0 * s * s))
        .sum();
    let scaled = &x / &rbm.sigma;
    let interaction = scaled.dot(&rbm.w).dot(&h);
    Ok(quad - interaction - rbm.b_h.dot(&h))
}

/// `F(x) = -log Σ_h exp(-E(x, h))`, summed analytically over hidden states.
pub fn free_energy(x: ArrayView1<f64>, rbm: &GaussianRbm) -> Result<f64> {
    let act = rbm.hidden_input(x)?;
    let quad: f64 = x
        .iter()
        .zip(&rbm.b_x)
        .zip(&rbm.sigma)
        .map(|((x, b), s)| (x - b).powi(2) / (2.0 * s * s))
        .sum();
    Ok(quad - act.iter().map(|&a| softplus(a)).sum::<f64>())
}

/// `p(h_k = 1 | x)`.
pub fn hidden_conditional(x: ArrayView1<f64>, rbm: &GaussianRbm) -> Result<Array1<f64>> {
    Ok(rbm.hidden_input(x)?.mapv(sigmoid))
}

/// Mean and standard deviation of each Gaussian visible unit given `h`.
pub fn visible_conditional(
    h: ArrayView1<f64>,
    rbm: &GaussianRbm,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_len("hidden vector", h.len(), rbm.n_hidden())?;
    let mean = &rbm.b_x + &(&rbm.sigma * &rbm.w.dot(&h));
    Ok((mean, rbm.sigma.clone()))
}

/// Bernoulli draws: `h_k = 1` iff `u_k < p_k` with `u_k ~ U[0, 1)`.
pub fn bernoulli(probs: ArrayView1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// Gaussian draws with the given means and standard deviations.
pub fn gaussian(mean: ArrayView1<f64>, sd: ArrayView1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    Array1::from_shape_fn(mean.len(), |j| mean[j] + sd[j] * std_normal.sample(rng))
}

pub fn sample_hidden(
    x: ArrayView1<f64>,
    rbm: &GaussianRbm,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    let p = hidden_conditional(x, rbm)?;
    Ok(bernoulli(p.view(), rng))
}

pub fn sample_visible(
    h: ArrayView1<f64>,
    rbm: &GaussianRbm,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    let (mean, sd) = visible_conditional(h, rbm)?;
    Ok(gaussian(mean.view(), sd.view(), rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdParams {
    pub k_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for CdParams {
    fn default() -> Self {
        Self {
            k_steps: 1,
            lr: 0.01,
            momentum: 0.5,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum buffers for [`cd_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbmVelocity {
    pub w: Array2<f64>,
    pub b_h: Array1<f64>,
    pub b_x: Array1<f64>,
}

impl RbmVelocity {
    pub fn zeros_like(rbm: &GaussianRbm) -> Self {
        Self {
            w: Array2::zeros(rbm.w.raw_dim()),
            b_h: Array1::zeros(rbm.n_hidden()),
            b_x: Array1::zeros(rbm.n_visible()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdStats {
    /// Batch mean of `‖x - E[x | h₀]‖²` for the first reconstruction.
    pub recon_error: f64,
}

/// One CD-k step on a batch (one sample per row).
///
/// The data side uses hidden probabilities. The chain alternates sampled binary
/// hidden states with mean-field visible reconstructions, and the model side
/// pairs the final reconstruction with the final sampled hidden state.
pub fn cd_update(
    batch: ArrayView2<f64>,
    rbm: &mut GaussianRbm,
    params: &CdParams,
    velocity: &mut RbmVelocity,
    rng: &mut impl Rng,
) -> Result<CdStats> {
    if batch.nrows() == 0 {
        return Err(NesError::data("empty batch"));
    }
    if params.k_steps == 0 {
        return Err(NesError::config("CD needs at least one Gibbs step"));
    }
    check_len("batch width", batch.ncols(), rbm.n_visible())?;

    let (d, k) = rbm.w.dim();
    let mut g_w = Array2::zeros((d, k));
    let mut g_bh = Array1::zeros(k);
    let mut g_bx = Array1::zeros(d);
    let mut recon = 0.0;
    let var = rbm.sigma.mapv(|s| s * s);

    for x0 in batch.rows() {
        let p0 = hidden_conditional(x0, rbm)?;
        let mut h = bernoulli(p0.view(), rng);
        let mut v = x0.to_owned();
        for step in 0..params.k_steps {
            v = visible_conditional(h.view(), rbm)?.0;
            if step == 0 {
                recon += (&x0 - &v).mapv(|e| e * e).sum();
            }
            let ph = hidden_conditional(v.view(), rbm)?;
            h = bernoulli(ph.view(), rng);
        }
        add_outer(&mut g_w, 1.0, (&x0 / &rbm.sigma).view(), p0.view());
        add_outer(&mut g_w, -1.0, (&v / &rbm.sigma).view(), h.view());
        g_bh += &(&p0 - &h);
        g_bx += &((&x0 - &v) / &var);
    }

    let n = batch.nrows() as f64;
    // descent direction: negative of the log-likelihood gradient estimate
    let scale = -1.0 / n;
    g_w *= scale;
    g_bh *= scale;
    g_bx *= scale;

    let p = params;
    step(&mut rbm.w, &mut velocity.w, &g_w, p.lr, p.momentum, p.weight_decay);
    step(&mut rbm.b_h, &mut velocity.b_h, &g_bh, p.lr, p.momentum, 0.0);
    step(&mut rbm.b_x, &mut velocity.b_x, &g_bx, p.lr, p.momentum, 0.0);

    Ok(CdStats {
        recon_error: recon / n,
    })
}

pub(crate) fn step<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    velocity: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    lr: f64,
    momentum: f64,
    decay: f64,
) {
    momentum_step(
        param.as_slice_mut().expect("standard layout"),
        velocity.as_slice_mut().expect("standard layout"),
        grad.as_slice().expect("standard layout"),
        lr,
        momentum,
        decay,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use ndarray::array;

    fn random_rbm(d: usize, k: usize, seed: u64) -> GaussianRbm {
        let mut r = seeded_rng(seed);
        GaussianRbm {
            w: Array2::from_shape_fn((d, k), |_| r.random_range(-1.0..1.0)),
            b_h: Array1::from_shape_fn(k, |_| r.random_range(-1.0..1.0)),
            b_x: Array1::from_shape_fn(d, |_| r.random_range(-1.0..1.0)),
            sigma: Array1::from_shape_fn(d, |_| r.random_range(0.5..1.5)),
        }
    }

    /// All `2^k` binary vectors.
    fn hidden_states(k: usize) -> Vec<Array1<f64>> {
        (0..1u32 << k)
            .map(|bits| Array1::from_shape_fn(k, |i| ((bits >> i) & 1) as f64))
            .collect()
    }

    fn loop_energy(x: &Array1<f64>, h: &Array1<f64>, rbm: &GaussianRbm) -> f64 {
        let mut e = 0.0;
        for j in 0..x.len() {
            e += (x[j] - rbm.b_x[j]).powi(2) / (2.0 * rbm.sigma[j].powi(2));
        }
        for j in 0..x.len() {
            for k in 0..h.len() {
                e -= x[j] / rbm.sigma[j] * rbm.w[[j, k]] * h[k];
            }
        }
        for k in 0..h.len() {
            e -= rbm.b_h[k] * h[k];
        }
        e
    }

    #[test]
    fn energy_examples() {
        let rbm = random_rbm(3, 2, 1);
        let e = energy(rbm.b_x.view(), Array1::zeros(2).view(), &rbm).unwrap();
        assert_eq!(e, 0.0);

        let mut plain = GaussianRbm::zeros(3, 2);
        plain.b_x = array![0.5, -1.0, 2.0];
        let x = array![1.0, 1.0, 1.0];
        let e = energy(x.view(), array![1.0, 0.0].view(), &plain).unwrap();
        assert!((e - (0.25 + 4.0 + 1.0) / 2.0).abs() < 1e-15);

        let mut r = seeded_rng(2);
        let x = Array1::from_shape_fn(3, |_| r.random_range(-2.0..2.0));
        for h in hidden_states(2) {
            let e = energy(x.view(), h.view(), &rbm).unwrap();
            assert!((e - loop_energy(&x, &h, &rbm)).abs() < 1e-12);
        }
        assert!(energy(x.view(), array![0.5, 1.0].view(), &rbm).is_err());
    }

    #[test]
    fn hidden_conditional_examples() {
        let rbm = GaussianRbm::zeros(4, 3);
        let p = hidden_conditional(array![1.0, 2.0, -3.0, 0.5].view(), &rbm).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));

        let mut sat = GaussianRbm::zeros(2, 2);
        sat.b_h.fill(20.0);
        let p = hidden_conditional(array![0.3, -0.1].view(), &sat).unwrap();
        assert!(p.iter().all(|&v| v > 1.0 - 1e-8));
    }

    fn enumerated_posterior(x: &Array1<f64>, rbm: &GaussianRbm) -> Array1<f64> {
        let k = rbm.n_hidden();
        let states = hidden_states(k);
        let energies: Vec<f64> = states.iter().map(|h| loop_energy(x, h, rbm)).collect();
        let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = energies.iter().map(|e| (-(e - min)).exp()).collect();
        let z: f64 = weights.iter().sum();
        Array1::from_shape_fn(k, |i| {
            states
                .iter()
                .zip(&weights)
                .filter(|(h, _)| h[i] == 1.0)
                .map(|(_, w)| w)
                .sum::<f64>()
                / z
        })
    }

    #[test]
    fn hidden_conditional_matches_enumeration() {
        for (seed, k) in [(3u64, 3usize), (4, 1), (5, 6), (6, 10)] {
            let d = 2 + (seed as usize % 3);
            let rbm = random_rbm(d, k, seed);
            let mut r = seeded_rng(seed + 100);
            let x = Array1::from_shape_fn(d, |_| r.random_range(-2.0..2.0));
            let p = hidden_conditional(x.view(), &rbm).unwrap();
            let oracle = enumerated_posterior(&x, &rbm);
            for (a, b) in p.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-10, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn free_energy_matches_enumeration() {
        for k in [1usize, 4, 10] {
            let rbm = random_rbm(3, k, 40 + k as u64);
            let x = array![0.3, -1.2, 0.8];
            let total: f64 = hidden_states(k)
                .iter()
                .map(|h| (-loop_energy(&x, h, &rbm)).exp())
                .sum();
            let f = free_energy(x.view(), &rbm).unwrap();
            assert!((f + total.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn visible_conditional_examples() {
        let rbm = random_rbm(3, 2, 7);
        let (mean, sd) = visible_conditional(Array1::zeros(2).view(), &rbm).unwrap();
        assert_eq!(mean, rbm.b_x);
        assert_eq!(sd, rbm.sigma);

        let mut ones = GaussianRbm::zeros(4, 2);
        ones.w.column_mut(1).fill(1.0);
        let (mean, _) = visible_conditional(array![0.0, 1.0].view(), &ones).unwrap();
        assert!(mean.iter().all(|&v| v == 1.0));

        let h = array![1.0, 0.0];
        let (mean, _) = visible_conditional(h.view(), &rbm).unwrap();
        for j in 0..3 {
            let mut m = 0.0;
            for k in 0..2 {
                m += rbm.w[[j, k]] * h[k];
            }
            let oracle = rbm.b_x[j] + rbm.sigma[j] * m;
            assert!((mean[j] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_contracts() {
        let mut rbm = GaussianRbm::zeros(2, 4);
        rbm.b_h = array![-1000.0, 1000.0, -1000.0, 1000.0];
        for seed in 0..5 {
            let h = sample_hidden(array![0.0, 0.0].view(), &rbm, &mut seeded_rng(seed)).unwrap();
            assert_eq!(h, array![0.0, 1.0, 0.0, 1.0]);
        }

        let rbm = random_rbm(3, 5, 8);
        let x = array![0.1, 0.2, 0.3];
        let a = sample_hidden(x.view(), &rbm, &mut seeded_rng(9)).unwrap();
        let b = sample_hidden(x.view(), &rbm, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        let h = array![1.0, 0.0, 1.0, 1.0, 0.0];
        let a = sample_visible(h.view(), &rbm, &mut seeded_rng(10)).unwrap();
        let b = sample_visible(h.view(), &rbm, &mut seeded_rng(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_law_of_large_numbers() {
        let mut rbm = GaussianRbm::zeros(1, 1);
        rbm.b_h[0] = (0.3f64 / 0.7).ln();
        let mut r = seeded_rng(12);
        let n = 100_000;
        let ones: f64 = (0..n)
            .map(|_| sample_hidden(array![0.0].view(), &rbm, &mut r).unwrap()[0])
            .sum();
        assert!((ones / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn cd_with_zero_lr_is_a_no_op() {
        let mut rbm = random_rbm(4, 3, 13);
        let before = rbm.clone();
        let mut vel = RbmVelocity::zeros_like(&rbm);
        let batch = Array2::from_shape_fn((5, 4), |(i, j)| (i + j) as f64 * 0.1);
        let params = CdParams {
            lr: 0.0,
            ..CdParams::default()
        };
        cd_update(batch.view(), &mut rbm, &params, &mut vel, &mut seeded_rng(1)).unwrap();
        assert_eq!(rbm, before);
    }

    #[test]
    fn cd_keeps_zero_weights_on_symmetric_data() {
        let mut rbm = GaussianRbm::zeros(3, 2);
        let mut vel = RbmVelocity::zeros_like(&rbm);
        let batch = array![[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5], [0.3, 0.7, -1.1], [-0.3, -0.7, 1.1]];
        let params = CdParams {
            lr: 0.1,
            weight_decay: 0.01,
            ..CdParams::default()
        };
        for seed in 0..10 {
            cd_update(batch.view(), &mut rbm, &params, &mut vel, &mut seeded_rng(seed)).unwrap();
        }
        assert!(rbm.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cd_rejects_empty_batch_and_zero_steps() {
        let mut rbm = GaussianRbm::zeros(3, 2);
        let mut vel = RbmVelocity::zeros_like(&rbm);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            cd_update(empty.view(), &mut rbm, &CdParams::default(), &mut vel, &mut seeded_rng(0)),
            Err(NesError::Data(_))
        ));
        let params = CdParams {
            k_steps: 0,
            ..CdParams::default()
        };
        let batch = Array2::<f64>::zeros((1, 3));
        assert!(cd_update(batch.view(), &mut rbm, &params, &mut vel, &mut seeded_rng(0)).is_err());
    }

    /// Two-component Gaussian mixture in 6 dimensions.
    fn mixture(n: usize, seed: u64) -> Array2<f64> {
        let mut r = seeded_rng(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [
            array![2.0, 2.0, 2.0, 0.0, 0.0, 0.0],
            array![0.0, 0.0, 0.0, 2.0, 2.0, 2.0],
        ];
        Array2::from_shape_fn((n, 6), |(i, j)| centers[i % 2][j] + noise.sample(&mut r))
    }

    #[test]
    fn cd1_reduces_reconstruction_error_on_mixture() {
        let data = mixture(200, 14);
        let mut r = seeded_rng(15);
        let mut rbm = GaussianRbm::new(6, 4, &mut r);
        let mut vel = RbmVelocity::zeros_like(&rbm);
        let params = CdParams {
            k_steps: 1,
            lr: 0.05,
            momentum: 0.5,
            weight_decay: 1e-4,
        };
        let mut errors = Vec::new();
        for _ in 0..200 {
            errors.push(cd_update(data.view(), &mut rbm, &params, &mut vel, &mut r).unwrap().recon_error);
        }
        let ratio = errors[199] / errors[0];
        assert!(ratio < 0.7, "ratio {ratio}");
    }
}
