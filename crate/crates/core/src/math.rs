//! Small numeric helpers shared by the model modules.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NesError, Result};

/// The generator used everywhere a seed is accepted. ChaCha output is stable
/// across platforms and crate releases, which keeps seeded runs bit-reproducible.
pub type NesRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> NesRng {
    NesRng::seed_from_u64(seed)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| (z - max).exp());
    let total = out.sum();
    out /= total;
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Adds `scale * outer(a, b)` into `acc` without allocating.
pub fn add_outer(acc: &mut Array2<f64>, scale: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, mut row) in acc.rows_mut().into_iter().enumerate() {
        let ai = scale * a[i];
        if ai == 0.0 {
            continue;
        }
        row.scaled_add(ai, &b);
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(NesError::config(format!(
            "{what}: expected length {want}, got {got}"
        )))
    }
}

pub(crate) fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(NesError::config(format!(
            "{what}: expected shape {}x{}, got {}x{}",
            want.0, want.1, got.0, got.1
        )))
    }
}

/// Momentum SGD step on a flat parameter slice:
/// `v <- momentum * v - lr * (grad + decay * p); p <- p + v`.
pub fn momentum_step(
    params: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    decay: f64,
) {
    debug_assert_eq!(params.len(), grad.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * (g + decay * *p);
        *p += *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_naive() {
        for &x in &[-5.0, -0.3, 0.0, 0.7, 4.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(array![1000.0, 1001.0, 999.0].view());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(p.view()), 1);
    }

    #[test]
    fn argmax_ties_pick_first() {
        assert_eq!(argmax(array![0.25, 0.25, 0.25, 0.25].view()), 0);
    }

    #[test]
    fn momentum_step_with_zero_lr_is_identity() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        momentum_step(&mut p, &mut v, &[3.0, 4.0], 0.0, 0.9, 1e-4);
        assert_eq!(p, vec![1.0, -2.0]);
    }
}
