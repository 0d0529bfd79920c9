//! Factored three-way (gated) RBM used as the middle layer of NES-G.
//!
//! The interaction tensor `W_ijk` between input `x`, gated visible `y` and
//! hidden `h` is never formed. It is factored as
//! `W_ijk = Σ_f Wx[i,f] Wy[j,f] Wh[k,f]`, so every quantity is computed from
//! the three filter responses
//!
//! ```text
//! fx_f = Σ_i Wx[i,f] x_i/σx_i     fy_f = Σ_j Wy[j,f] y_j/σy_j     fh_f = Σ_k Wh[k,f] h_k
//! ```
//!
//! and the energy is
//!
//! ```text
//! E = -Σ_k bh_k h_k + Σ_j (y_j - by_j)²/2σy_j² + Σ_i (x_i - bx_i)²/2σx_i² - Σ_f fx_f fy_f fh_f
//! ```
//!
//! Learning targets the conditional `p(y | x)`: `x` stays clamped during the
//! negative phase, and factor weights carry a quadratic barrier on negative
//! values.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NesError, Result};
use crate::gaussian_rbm::{bernoulli, gaussian, step, CdStats};
use crate::math::{add_outer, check_len, sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredRbm {
    /// Input-to-factor weights, `D x F`.
    pub w_fx: Array2<f64>,
    /// Visible-to-factor weights, `M x F`.
    pub w_fy: Array2<f64>,
    /// Hidden-to-factor weights, `K x F`.
    pub w_fh: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_y: Array1<f64>,
    pub b_h: Array1<f64>,
    pub sigma_x: Array1<f64>,
    pub sigma_y: Array1<f64>,
}

impl FactoredRbm {
    /// Factor weights `|N(0, 0.01²)|` (so the barrier starts inactive), zero
    /// biases, unit standard deviations.
    pub fn new(d: usize, m: usize, k: usize, f: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::<f64>::new(0.0, 0.01).expect("valid normal");
        let mut init = |r: usize| Array2::from_shape_fn((r, f), |_| normal.sample(rng).abs());
        let w_fx = init(d);
        let w_fy = init(m);
        let w_fh = init(k);
        Self {
            w_fx,
            w_fy,
            w_fh,
            ..Self::zeros(d, m, k, f)
        }
    }

    pub fn zeros(d: usize, m: usize, k: usize, f: usize) -> Self {
        Self {
            w_fx: Array2::zeros((d, f)),
            w_fy: Array2::zeros((m, f)),
            w_fh: Array2::zeros((k, f)),
            b_x: Array1::zeros(d),
            b_y: Array1::zeros(m),
            b_h: Array1::zeros(k),
            sigma_x: Array1::ones(d),
            sigma_y: Array1::ones(m),
        }
    }

    pub fn n_input(&self) -> usize {
        self.w_fx.nrows()
    }

    pub fn n_visible(&self) -> usize {
        self.w_fy.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_fh.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.w_fx.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.n_factors();
        if self.w_fy.ncols() != f || self.w_fh.ncols() != f {
            return Err(NesError::config("factor matrices disagree on the factor count"));
        }
        check_len("input bias", self.b_x.len(), self.n_input())?;
        check_len("visible bias", self.b_y.len(), self.n_visible())?;
        check_len("hidden bias", self.b_h.len(), self.n_hidden())?;
        check_len("input sigma", self.sigma_x.len(), self.n_input())?;
        check_len("visible sigma", self.sigma_y.len(), self.n_visible())?;
        if self
            .sigma_x
            .iter()
            .chain(self.sigma_y.iter())
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(NesError::config("standard deviations must be positive and finite"));
        }
        let finite = [&self.w_fx, &self.w_fy, &self.w_fh]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b_x, &self.b_y, &self.b_h]
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(NesError::config("factored RBM parameters must be finite"));
        }
        Ok(())
    }

    fn fx(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("input vector", x.len(), self.n_input())?;
        Ok((&x / &self.sigma_x).dot(&self.w_fx))
    }

    fn fy(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("visible vector", y.len(), self.n_visible())?;
        Ok((&y / &self.sigma_y).dot(&self.w_fy))
    }

    fn fh(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("hidden vector", h.len(), self.n_hidden())?;
        Ok(h.dot(&self.w_fh))
    }
}

/// Filter responses of the three unit groups, one entry per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorResponses {
    pub fx: Array1<f64>,
    pub fy: Array1<f64>,
    pub fh: Array1<f64>,
}

pub fn factor_responses(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<FactorResponses> {
    Ok(FactorResponses {
        fx: frbm.fx(x)?,
        fy: frbm.fy(y)?,
        fh: frbm.fh(h)?,
    })
}

fn quadratic(v: ArrayView1<f64>, b: &Array1<f64>, s: &Array1<f64>) -> f64 {
    v.iter()
        .zip(b)
        .zip(s)
        .map(|((v, b), s)| (v - b).powi(2) / (2.0 * s * s))
        .sum()
}

pub fn energy3(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<f64> {
    let r = factor_responses(x, y, h, frbm)?;
    let interaction: f64 = Zip::from(&r.fx)
        .and(&r.fy)
        .and(&r.fh)
        .fold(0.0, |acc, a, b, c| acc + a * b * c);
    Ok(-frbm.b_h.dot(&h) + quadratic(y, &frbm.b_y, &frbm.sigma_y)
        + quadratic(x, &frbm.b_x, &frbm.sigma_x)
        - interaction)
}

/// Total input to each hidden unit: `Σ_f Wh[k,f] fx_f fy_f + bh_k`.
pub fn delta_e_hidden(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<Array1<f64>> {
    let gate = frbm.fx(x)? * frbm.fy(y)?;
    Ok(frbm.w_fh.dot(&gate) + &frbm.b_h)
}

/// Total input to each gated visible unit: `Σ_f Wy[j,f] fx_f fh_f + by_j`.
pub fn delta_e_visible(
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<Array1<f64>> {
    let gate = frbm.fx(x)? * frbm.fh(h)?;
    Ok(frbm.w_fy.dot(&gate) + &frbm.b_y)
}

/// Total input to each input unit: `Σ_f Wx[i,f] fy_f fh_f + bx_i`.
pub fn delta_e_input(
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<Array1<f64>> {
    let gate = frbm.fy(y)? * frbm.fh(h)?;
    Ok(frbm.w_fx.dot(&gate) + &frbm.b_x)
}

/// `p(h_k = 1 | y; x)`.
pub fn hidden_conditional3(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<Array1<f64>> {
    Ok(delta_e_hidden(x, y, frbm)?.mapv(sigmoid))
}

/// Mean and standard deviation of `y` given `h` and `x`:
/// `mean_j = by_j + σy_j Σ_f Wy[j,f] fx_f fh_f`.
pub fn visible_conditional3(
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let gate = frbm.fx(x)? * frbm.fh(h)?;
    let mean = &frbm.b_y + &(&frbm.sigma_y * &frbm.w_fy.dot(&gate));
    Ok((mean, frbm.sigma_y.clone()))
}

/// Negative energy derivatives `-∂E/∂θ` for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrads {
    pub w_fh: Array2<f64>,
    pub w_fy: Array2<f64>,
    pub w_fx: Array2<f64>,
    pub b_h: Array1<f64>,
    pub b_x: Array1<f64>,
    pub b_y: Array1<f64>,
}

impl EnergyGrads {
    pub fn zeros_like(frbm: &FactoredRbm) -> Self {
        Self {
            w_fh: Array2::zeros(frbm.w_fh.raw_dim()),
            w_fy: Array2::zeros(frbm.w_fy.raw_dim()),
            w_fx: Array2::zeros(frbm.w_fx.raw_dim()),
            b_h: Array1::zeros(frbm.n_hidden()),
            b_x: Array1::zeros(frbm.n_input()),
            b_y: Array1::zeros(frbm.n_visible()),
        }
    }

    /// `self += scale * (-∂E/∂θ)` evaluated at `(x, y, h)`.
    fn accumulate(
        &mut self,
        scale: f64,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
        h: ArrayView1<f64>,
        frbm: &FactoredRbm,
    ) -> Result<()> {
        let r = factor_responses(x, y, h, frbm)?;
        let xs = &x / &frbm.sigma_x;
        let ys = &y / &frbm.sigma_y;
        add_outer(&mut self.w_fh, scale, h, (&r.fx * &r.fy).view());
        add_outer(&mut self.w_fy, scale, ys.view(), (&r.fx * &r.fh).view());
        add_outer(&mut self.w_fx, scale, xs.view(), (&r.fy * &r.fh).view());
        self.b_h.scaled_add(scale, &h);
        let vx = (&x - &frbm.b_x) / &frbm.sigma_x.mapv(|s| s * s);
        let vy = (&y - &frbm.b_y) / &frbm.sigma_y.mapv(|s| s * s);
        self.b_x.scaled_add(scale, &vx);
        self.b_y.scaled_add(scale, &vy);
        Ok(())
    }
}

pub fn energy_gradients(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
    frbm: &FactoredRbm,
) -> Result<EnergyGrads> {
    let mut g = EnergyGrads::zeros_like(frbm);
    g.accumulate(1.0, x, y, h, frbm)?;
    Ok(g)
}

/// Gradients of the barrier penalty with respect to each factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierGrads {
    pub w_fx: Array2<f64>,
    pub w_fy: Array2<f64>,
    pub w_fh: Array2<f64>,
}

/// `(α/2) Σ f(w)` over all factor weights with `f(w) = w²` for `w < 0`, else 0.
pub fn barrier_penalty(frbm: &FactoredRbm, alpha: f64) -> (f64, BarrierGrads) {
    let pen = |m: &Array2<f64>| m.iter().filter(|&&w| w < 0.0).map(|w| w * w).sum::<f64>();
    let grad = |m: &Array2<f64>| m.mapv(|w| if w < 0.0 { alpha * w } else { 0.0 });
    let total = pen(&frbm.w_fx) + pen(&frbm.w_fy) + pen(&frbm.w_fh);
    (
        0.5 * alpha * total,
        BarrierGrads {
            w_fx: grad(&frbm.w_fx),
            w_fy: grad(&frbm.w_fy),
            w_fh: grad(&frbm.w_fh),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cd3Params {
    pub k_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Barrier strength `α`.
    pub alpha: f64,
    /// Cap on the joint Frobenius norm of the factor-weight CD estimate;
    /// `None` leaves it unclipped.
    pub max_grad_norm: Option<f64>,
}

impl Default for Cd3Params {
    fn default() -> Self {
        Self {
            k_steps: 1,
            lr: 0.01,
            momentum: 0.5,
            weight_decay: 1e-4,
            alpha: 0.0,
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredVelocity {
    pub w_fx: Array2<f64>,
    pub w_fy: Array2<f64>,
    pub w_fh: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_y: Array1<f64>,
    pub b_h: Array1<f64>,
}

impl FactoredVelocity {
    pub fn zeros_like(frbm: &FactoredRbm) -> Self {
        let g = EnergyGrads::zeros_like(frbm);
        Self {
            w_fx: g.w_fx,
            w_fy: g.w_fy,
            w_fh: g.w_fh,
            b_x: g.b_x,
            b_y: g.b_y,
            b_h: g.b_h,
        }
    }
}

/// One barrier-regularised CD-k step on paired rows of `xs` and `ys`.
///
/// The three-way statistics grow with the product of `‖x‖`, `‖y‖` and the
/// factor weights, so an unclipped step can run away once the clamped input
/// grows; `max_grad_norm` rescales the factor-weight estimate (not the
/// barrier) when it exceeds the cap.
///
/// Positive statistics use `(x, y, p(h | x, y))`. The negative chain keeps `x`
/// clamped and alternates sampled hidden states with sampled `y`; its final
/// `(y, h)` pair supplies the model statistics. Reported reconstruction error is
/// the batch mean of `‖y - E[y | x, h₀]‖²`.
pub fn cd_update3(
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    frbm: &mut FactoredRbm,
    params: &Cd3Params,
    velocity: &mut FactoredVelocity,
    rng: &mut impl Rng,
) -> Result<CdStats> {
    if xs.nrows() == 0 {
        return Err(NesError::data("empty batch"));
    }
    if xs.nrows() != ys.nrows() {
        return Err(NesError::config(format!(
            "batch has {} inputs but {} visible vectors",
            xs.nrows(),
            ys.nrows()
        )));
    }
    if params.k_steps == 0 {
        return Err(NesError::config("CD needs at least one Gibbs step"));
    }
    check_len("input width", xs.ncols(), frbm.n_input())?;
    check_len("visible width", ys.ncols(), frbm.n_visible())?;

    let mut stats = EnergyGrads::zeros_like(frbm);
    let mut recon = 0.0;
    for (x, y0) in xs.rows().into_iter().zip(ys.rows()) {
        let p0 = hidden_conditional3(x, y0, frbm)?;
        stats.accumulate(1.0, x, y0, p0.view(), frbm)?;

        let mut h = bernoulli(p0.view(), rng);
        let mut y = y0.to_owned();
        for step in 0..params.k_steps {
            let (mean, sd) = visible_conditional3(x, h.view(), frbm)?;
            if step == 0 {
                recon += (&y0 - &mean).mapv(|e| e * e).sum();
            }
            y = gaussian(mean.view(), sd.view(), rng);
            let ph = hidden_conditional3(x, y.view(), frbm)?;
            h = bernoulli(ph.view(), rng);
        }
        stats.accumulate(-1.0, x, y.view(), h.view(), frbm)?;
    }

    let n = xs.nrows() as f64;
    let norm = [&stats.w_fx, &stats.w_fy, &stats.w_fh]
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
        / n;
    let scale = match params.max_grad_norm {
        Some(cap) if norm > cap => cap / norm,
        _ => 1.0,
    };
    let (_, barrier) = barrier_penalty(frbm, params.alpha);
    // descent direction: -(positive - negative)/n plus the barrier gradient
    let descent = |g: &Array2<f64>, b: &Array2<f64>| g * (-scale / n) + b;
    let g_fx = descent(&stats.w_fx, &barrier.w_fx);
    let g_fy = descent(&stats.w_fy, &barrier.w_fy);
    let g_fh = descent(&stats.w_fh, &barrier.w_fh);
    let g_bx = &stats.b_x * (-1.0 / n);
    let g_by = &stats.b_y * (-1.0 / n);
    let g_bh = &stats.b_h * (-1.0 / n);

    let p = params;
    step(&mut frbm.w_fx, &mut velocity.w_fx, &g_fx, p.lr, p.momentum, p.weight_decay);
    step(&mut frbm.w_fy, &mut velocity.w_fy, &g_fy, p.lr, p.momentum, p.weight_decay);
    step(&mut frbm.w_fh, &mut velocity.w_fh, &g_fh, p.lr, p.momentum, p.weight_decay);
    step(&mut frbm.b_x, &mut velocity.b_x, &g_bx, p.lr, p.momentum, 0.0);
    step(&mut frbm.b_y, &mut velocity.b_y, &g_by, p.lr, p.momentum, 0.0);
    step(&mut frbm.b_h, &mut velocity.b_h, &g_bh, p.lr, p.momentum, 0.0);

    Ok(CdStats {
        recon_error: recon / n,
    })
}

/// Number of strictly negative entries across the three factor matrices.
pub fn negative_weight_count(frbm: &FactoredRbm) -> usize {
    [&frbm.w_fx, &frbm.w_fy, &frbm.w_fh]
        .iter()
        .map(|m| m.iter().filter(|&&w| w < 0.0).count())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use ndarray::array;

    fn scalar(wx: f64, wy: f64, wh: f64) -> FactoredRbm {
        let mut m = FactoredRbm::zeros(1, 1, 1, 1);
        m.w_fx[[0, 0]] = wx;
        m.w_fy[[0, 0]] = wy;
        m.w_fh[[0, 0]] = wh;
        m
    }

    pub(super) fn random_frbm(d: usize, m: usize, k: usize, f: usize, seed: u64) -> FactoredRbm {
        let mut r = seeded_rng(seed);
        let mut mat = |a: usize, b: usize| Array2::from_shape_fn((a, b), |_| r.random_range(-1.0..1.0));
        let (w_fx, w_fy, w_fh) = (mat(d, f), mat(m, f), mat(k, f));
        let mut r = seeded_rng(seed ^ 0xABCD);
        let mut vec = |n: usize, lo: f64, hi: f64| Array1::from_shape_fn(n, |_| r.random_range(lo..hi));
        FactoredRbm {
            w_fx,
            w_fy,
            w_fh,
            b_x: vec(d, -1.0, 1.0),
            b_y: vec(m, -1.0, 1.0),
            b_h: vec(k, -1.0, 1.0),
            sigma_x: vec(d, 0.5, 1.5),
            sigma_y: vec(m, 0.5, 1.5),
        }
    }

    #[test]
    fn responses_examples() {
        let frbm = random_frbm(4, 3, 2, 5, 1);
        let r = factor_responses(
            Array1::zeros(4).view(),
            array![1.0, 2.0, 3.0].view(),
            array![1.0, 0.0].view(),
            &frbm,
        )
        .unwrap();
        assert!(r.fx.iter().all(|&v| v == 0.0));

        let r = factor_responses(array![1.0].view(), array![1.0].view(), array![1.0].view(), &scalar(2.0, 3.0, 4.0)).unwrap();
        assert_eq!((r.fx[0], r.fy[0], r.fh[0]), (2.0, 3.0, 4.0));
    }

    #[test]
    fn responses_match_loops() {
        let frbm = random_frbm(4, 3, 2, 5, 2);
        let x = array![0.3, -0.2, 1.1, 0.7];
        let y = array![-0.5, 0.9, 0.1];
        let h = array![1.0, 0.0];
        let r = factor_responses(x.view(), y.view(), h.view(), &frbm).unwrap();
        for f in 0..5 {
            let mut fx = 0.0;
            for i in 0..4 {
                fx += frbm.w_fx[[i, f]] * x[i] / frbm.sigma_x[i];
            }
            let mut fy = 0.0;
            for j in 0..3 {
                fy += frbm.w_fy[[j, f]] * y[j] / frbm.sigma_y[j];
            }
            let mut fh = 0.0;
            for k in 0..2 {
                fh += frbm.w_fh[[k, f]] * h[k];
            }
            assert!((r.fx[f] - fx).abs() < 1e-12);
            assert!((r.fy[f] - fy).abs() < 1e-12);
            assert!((r.fh[f] - fh).abs() < 1e-12);
        }
    }

    #[test]
    fn energy3_examples() {
        let frbm = random_frbm(3, 2, 2, 4, 3);
        let e = energy3(frbm.b_x.view(), frbm.b_y.view(), Array1::zeros(2).view(), &frbm).unwrap();
        assert_eq!(e, 0.0);

        let mut no_gate = frbm.clone();
        no_gate.w_fy.fill(0.0);
        let (x, y, h) = (array![0.5, 0.1, -0.3], array![1.0, -1.0], array![1.0, 1.0]);
        let e = energy3(x.view(), y.view(), h.view(), &no_gate).unwrap();
        let expected = -no_gate.b_h.sum()
            + quadratic(y.view(), &no_gate.b_y, &no_gate.sigma_y)
            + quadratic(x.view(), &no_gate.b_x, &no_gate.sigma_x);
        assert!((e - expected).abs() < 1e-15);
    }

    #[test]
    fn delta_e_examples() {
        let frbm = random_frbm(3, 2, 4, 5, 4);
        let zero_x = delta_e_hidden(Array1::zeros(3).view(), array![1.0, 2.0].view(), &frbm).unwrap();
        assert_eq!(zero_x, frbm.b_h);
        let zero_x = delta_e_visible(Array1::zeros(3).view(), array![1.0, 0.0, 1.0, 1.0].view(), &frbm).unwrap();
        assert_eq!(zero_x, frbm.b_y);
        let zero_y = delta_e_input(Array1::zeros(2).view(), array![1.0, 0.0, 1.0, 1.0].view(), &frbm).unwrap();
        assert_eq!(zero_y, frbm.b_x);

        let mut s = scalar(2.0, 3.0, 4.0);
        s.b_h[0] = 0.5;
        s.b_y[0] = -0.25;
        s.b_x[0] = 0.125;
        let (x, y, h) = (array![1.5], array![-0.5], array![1.0]);
        let dh = delta_e_hidden(x.view(), y.view(), &s).unwrap()[0];
        assert!((dh - (4.0 * 2.0 * 3.0 * 1.5 * -0.5 + 0.5)).abs() < 1e-15);
        let dv = delta_e_visible(x.view(), h.view(), &s).unwrap()[0];
        assert!((dv - (3.0 * 2.0 * 1.5 * 4.0 - 0.25)).abs() < 1e-15);
        let di = delta_e_input(y.view(), h.view(), &s).unwrap()[0];
        assert!((di - (2.0 * 3.0 * -0.5 * 4.0 + 0.125)).abs() < 1e-15);
    }

    #[test]
    fn conditional_examples() {
        let frbm = FactoredRbm::zeros(3, 2, 4, 3);
        let p = hidden_conditional3(array![1.0, 2.0, 3.0].view(), array![1.0, -1.0].view(), &frbm).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        let mut sat = frbm.clone();
        sat.b_h.fill(25.0);
        let p = hidden_conditional3(array![1.0, 2.0, 3.0].view(), array![1.0, -1.0].view(), &sat).unwrap();
        assert!(p.iter().all(|&v| v > 1.0 - 1e-10));

        let frbm = random_frbm(3, 2, 4, 3, 5);
        let (mean, sd) = visible_conditional3(array![0.2, 0.3, 0.4].view(), Array1::zeros(4).view(), &frbm).unwrap();
        assert_eq!(mean, frbm.b_y);
        assert_eq!(sd, frbm.sigma_y);

        let mut s = scalar(2.0, 3.0, 4.0);
        s.sigma_y[0] = 0.5;
        let (mean, _) = visible_conditional3(array![1.0].view(), array![1.0].view(), &s).unwrap();
        assert!((mean[0] - 0.5 * 3.0 * 2.0 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn energy_gradient_examples() {
        let frbm = random_frbm(3, 2, 2, 4, 6);
        let g = energy_gradients(array![0.1, 0.2, 0.3].view(), array![1.0, 2.0].view(), Array1::zeros(2).view(), &frbm).unwrap();
        assert!(g.w_fh.iter().chain(g.b_h.iter()).all(|&v| v == 0.0));

        let s = scalar(2.0, 3.0, 4.0);
        let one = array![1.0];
        let g = energy_gradients(one.view(), one.view(), one.view(), &s).unwrap();
        assert_eq!(g.w_fh[[0, 0]], 2.0 * 3.0);
        assert_eq!(g.w_fy[[0, 0]], 2.0 * 4.0);
        assert_eq!(g.w_fx[[0, 0]], 3.0 * 4.0);
        assert_eq!((g.b_h[0], g.b_x[0], g.b_y[0]), (1.0, 1.0, 1.0));
    }

    #[test]
    fn barrier_examples() {
        let frbm = FactoredRbm::new(3, 3, 2, 4, &mut seeded_rng(7));
        let (pen, g) = barrier_penalty(&frbm, 5.0);
        assert_eq!(pen, 0.0);
        assert!(g.w_fx.iter().chain(g.w_fy.iter()).chain(g.w_fh.iter()).all(|&v| v == 0.0));

        let mut one = FactoredRbm::zeros(1, 1, 1, 1);
        one.w_fy[[0, 0]] = -2.0;
        let (pen, g) = barrier_penalty(&one, 1.0);
        assert_eq!(pen, 2.0);
        assert_eq!(g.w_fy[[0, 0]], -2.0);

        let frbm = random_frbm(4, 3, 3, 5, 8);
        let mut oracle = 0.0;
        for m in [&frbm.w_fx, &frbm.w_fy, &frbm.w_fh] {
            for &w in m.iter() {
                if w < 0.0 {
                    oracle += w * w;
                }
            }
        }
        let (pen, _) = barrier_penalty(&frbm, 0.7);
        assert!((pen - 0.35 * oracle).abs() < 1e-12);
    }

    fn gated_batch(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut r = seeded_rng(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let gate = Array1::from_shape_fn(8, |i| if i % 2 == 0 { 1.5 } else { 0.5 });
        let xs = Array2::from_shape_fn((n, 8), |_| 1.0 + r.random_range(-1.0..1.0));
        let ys = Array2::from_shape_fn((n, 8), |(s, j)| gate[j] * xs[[s, j]] + noise.sample(&mut r));
        (xs, ys)
    }

    #[test]
    fn cd3_zero_lr_and_determinism() {
        let (xs, ys) = gated_batch(16, 9);
        let base = FactoredRbm::new(8, 8, 6, 8, &mut seeded_rng(10));
        let mut frozen = base.clone();
        let mut vel = FactoredVelocity::zeros_like(&frozen);
        let params = Cd3Params {
            lr: 0.0,
            alpha: 1.0,
            ..Cd3Params::default()
        };
        cd_update3(xs.view(), ys.view(), &mut frozen, &params, &mut vel, &mut seeded_rng(1)).unwrap();
        assert_eq!(frozen, base);

        let params = Cd3Params {
            lr: 0.01,
            ..Cd3Params::default()
        };
        let run = || {
            let mut m = base.clone();
            let mut v = FactoredVelocity::zeros_like(&m);
            let mut r = seeded_rng(77);
            for _ in 0..5 {
                cd_update3(xs.view(), ys.view(), &mut m, &params, &mut v, &mut r).unwrap();
            }
            m
        };
        let (a, b) = (run(), run());
        for (p, q) in a.w_fx.iter().zip(b.w_fx.iter()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn cd3_errors() {
        let mut frbm = FactoredRbm::zeros(2, 2, 2, 2);
        let mut vel = FactoredVelocity::zeros_like(&frbm);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            cd_update3(empty.view(), empty.view(), &mut frbm, &Cd3Params::default(), &mut vel, &mut seeded_rng(0)),
            Err(NesError::Data(_))
        ));
        let xs = Array2::<f64>::zeros((2, 2));
        let ys = Array2::<f64>::zeros((3, 2));
        assert!(cd_update3(xs.view(), ys.view(), &mut frbm, &Cd3Params::default(), &mut vel, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn cd3_learns_gated_data() {
        let (xs, ys) = gated_batch(200, 11);
        let mut r = seeded_rng(12);
        let mut frbm = FactoredRbm::new(8, 8, 6, 8, &mut r);
        let mut vel = FactoredVelocity::zeros_like(&frbm);
        let params = Cd3Params {
            k_steps: 1,
            lr: 0.01,
            momentum: 0.5,
            weight_decay: 1e-4,
            alpha: 0.0,
            max_grad_norm: None,
        };
        let mut errors = Vec::new();
        for _ in 0..300 {
            errors.push(cd_update3(xs.view(), ys.view(), &mut frbm, &params, &mut vel, &mut r).unwrap().recon_error);
        }
        let ratio = errors[299] / errors[0];
        assert!(ratio < 0.8, "ratio {ratio}");
    }

    #[test]
    fn barrier_reduces_negative_weights() {
        // zero-mean data so the three-way statistics pull factor weights both ways
        let mut r = seeded_rng(13);
        let xs = Array2::from_shape_fn((64, 8), |_| r.random_range(-1.0..1.0));
        let ys = Array2::from_shape_fn((64, 8), |_| r.random_range(-1.0..1.0));
        let train = |alpha: f64| {
            let mut r = seeded_rng(14);
            let mut frbm = FactoredRbm::new(8, 8, 6, 8, &mut r);
            let mut vel = FactoredVelocity::zeros_like(&frbm);
            let params = Cd3Params {
                lr: 0.5,
                alpha,
                ..Cd3Params::default()
            };
            for _ in 0..100 {
                cd_update3(xs.view(), ys.view(), &mut frbm, &params, &mut vel, &mut r).unwrap();
            }
            assert!(frbm.w_fh.iter().chain(&frbm.w_fx).chain(&frbm.w_fy).all(|w| w.is_finite()));
            negative_weight_count(&frbm)
        };
        let (free, barred) = (train(0.0), train(10.0));
        assert!(free > 0, "unregularized run never crossed zero");
        assert!(barred < free, "alpha=10 left {barred} negatives, alpha=0 left {free}");
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        let (xs, ys) = gated_batch(32, 15);
        let base = FactoredRbm::new(8, 8, 6, 8, &mut seeded_rng(16));
        let step_norm = |cap: Option<f64>| {
            let mut m = base.clone();
            let mut v = FactoredVelocity::zeros_like(&m);
            let params = Cd3Params {
                lr: 1.0,
                weight_decay: 0.0,
                max_grad_norm: cap,
                ..Cd3Params::default()
            };
            cd_update3(xs.view(), ys.view(), &mut m, &params, &mut v, &mut seeded_rng(17)).unwrap();
            [(&m.w_fx, &base.w_fx), (&m.w_fy, &base.w_fy), (&m.w_fh, &base.w_fh)]
                .iter()
                .map(|(a, b)| (*a - *b).mapv(|d| d * d).sum())
                .sum::<f64>()
                .sqrt()
        };
        let free = step_norm(None);
        assert!(free > 1e-3, "unclipped step {free}");
        let cap = free / 4.0;
        assert!((step_norm(Some(cap)) - cap).abs() < 1e-9 * free);
        assert_eq!(step_norm(Some(10.0 * free)), free);
    }
}
