//! Linear layers around the RBM core.
//!
//! All layers use the row-vector convention: inputs multiply matrices from the
//! left (`x F`, `y M`, `h J`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{NesError, Result};
use crate::math::{check_len, outer};

fn uniform(rows: usize, cols: usize, half_width: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-half_width..=half_width))
}

/// One `D x D` matrix per context channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTransform {
    pub mats: Vec<Array2<f64>>,
}

impl ContextTransform {
    pub fn new(mats: Vec<Array2<f64>>) -> Result<Self> {
        let d = mats.first().map(|m| m.nrows()).unwrap_or(0);
        if mats.is_empty() || d == 0 {
            return Err(NesError::config("context transform needs at least one D x D matrix"));
        }
        for (i, m) in mats.iter().enumerate() {
            if m.dim() != (d, d) {
                return Err(NesError::config(format!(
                    "context matrix {i} is {:?}, expected {d}x{d}",
                    m.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(NesError::config(format!("context matrix {i} has non-finite entries")));
            }
        }
        Ok(Self { mats })
    }

    /// Entries uniform in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn random(n_ctx: usize, d: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (d as f64).sqrt();
        Self {
            mats: (0..n_ctx).map(|_| uniform(d, d, a, rng)).collect(),
        }
    }

    pub fn identity(n_ctx: usize, d: usize) -> Self {
        Self {
            mats: vec![Array2::eye(d); n_ctx],
        }
    }

    pub fn n_ctx(&self) -> usize {
        self.mats.len()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    fn check_inputs(&self, xs: ArrayView2<f64>) -> Result<()> {
        if xs.dim() != (self.n_ctx(), self.dim()) {
            return Err(NesError::config(format!(
                "context inputs are {:?}, expected {}x{}",
                xs.dim(),
                self.n_ctx(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `x̂ = Σ_i xs[i] F_i`, with `xs` holding one context vector per row.
pub fn context_forward(xs: ArrayView2<f64>, ct: &ContextTransform) -> Result<Array1<f64>> {
    ct.check_inputs(xs)?;
    let mut out = Array1::zeros(ct.dim());
    for (x, f) in xs.rows().into_iter().zip(&ct.mats) {
        out += &x.dot(f);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextGrads {
    pub mats: Vec<Array2<f64>>,
    /// One row per context input.
    pub xs: Array2<f64>,
}

/// `dL/dF_i = outer(xs[i], g)` and `dL/dxs[i] = g F_iᵀ`.
pub fn context_backward(
    grad: ArrayView1<f64>,
    xs: ArrayView2<f64>,
    ct: &ContextTransform,
) -> Result<ContextGrads> {
    ct.check_inputs(xs)?;
    check_len("context gradient", grad.len(), ct.dim())?;
    let mats = xs.rows().into_iter().map(|x| outer(x, grad)).collect();
    let mut gx = Array2::zeros(xs.raw_dim());
    for (i, f) in ct.mats.iter().enumerate() {
        gx.row_mut(i).assign(&f.dot(&grad));
    }
    Ok(ContextGrads { mats, xs: gx })
}

/// Projects the spoken-EEG vector (`M`) into the `D`-dimensional feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMap {
    pub m: Array2<f64>,
}

impl BiasMap {
    pub fn random(m_dim: usize, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            m: uniform(m_dim, d, 1.0 / (d as f64).sqrt(), rng),
        }
    }

    pub fn zeros(m_dim: usize, d: usize) -> Self {
        Self {
            m: Array2::zeros((m_dim, d)),
        }
    }
}

pub fn bias_forward(y: ArrayView1<f64>, bm: &BiasMap) -> Result<Array1<f64>> {
    check_len("spoken-EEG vector", y.len(), bm.m.nrows())?;
    Ok(y.dot(&bm.m))
}

/// Returns `(dL/dM, dL/dy)`.
pub fn bias_backward(
    grad: ArrayView1<f64>,
    y: ArrayView1<f64>,
    bm: &BiasMap,
) -> Result<(Array2<f64>, Array1<f64>)> {
    check_len("spoken-EEG vector", y.len(), bm.m.nrows())?;
    check_len("bias gradient", grad.len(), bm.m.ncols())?;
    Ok((outer(y, grad), bm.m.dot(&grad)))
}

/// `K x L` map from the hidden representation onto speech features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechProjection {
    pub j: Array2<f64>,
}

impl SpeechProjection {
    pub fn random(k: usize, l: usize, rng: &mut impl Rng) -> Self {
        Self {
            j: uniform(k, l, 1.0 / (k as f64).sqrt(), rng),
        }
    }
}

/// `ĥ = h J`.
pub fn project_forward(h: ArrayView1<f64>, sp: &SpeechProjection) -> Result<Array1<f64>> {
    check_len("hidden vector", h.len(), sp.j.nrows())?;
    Ok(h.dot(&sp.j))
}

/// Returns `(dL/dJ, dL/dh)`.
pub fn project_backward(
    grad: ArrayView1<f64>,
    h: ArrayView1<f64>,
    sp: &SpeechProjection,
) -> Result<(Array2<f64>, Array1<f64>)> {
    check_len("hidden vector", h.len(), sp.j.nrows())?;
    check_len("projection gradient", grad.len(), sp.j.ncols())?;
    Ok((outer(h, grad), sp.j.dot(&grad)))
}
