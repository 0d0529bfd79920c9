//! Central finite-difference checks of every analytic gradient.
//!
//! Errors are measured per parameter array as
//! `‖g_analytic - g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)`, with two zero
//! vectors counting as an exact match.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::factored_rbm::{energy3, energy_gradients, FactoredRbm};
use crate::math::seeded_rng;
use crate::model::{Core, ModelShape, NesModel, Objective, TrainConfig, Variant};
use crate::preprocess::FeatureTuple;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Tolerance for the factored energy derivatives.
pub const ENERGY_TOL: f64 = 1e-6;
/// Tolerance for full-model supervised gradients.
pub const MODEL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: String, analytic: &[f64], numeric: &[f64], tolerance: f64) -> Self {
        let rel_error = relative_error(analytic, numeric);
        Self {
            name,
            rel_error,
            tolerance,
            passed: rel_error < tolerance,
        }
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        if diff == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        diff / scale
    }
}

/// Central difference of `f` with respect to each entry of `values`.
fn numeric_gradient(values: &mut [f64], eps: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + eps;
            let up = f(values);
            values[i] = orig - eps;
            let down = f(values);
            values[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn flat2(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Compares `energy_gradients` with finite differences of `-energy3` for
/// every parameter of the factored RBM.
pub fn check_energy_gradients(
    frbm: &FactoredRbm,
    x: &Array1<f64>,
    y: &Array1<f64>,
    h: &Array1<f64>,
    eps: f64,
) -> Result<Vec<CheckResult>> {
    let g = energy_gradients(x.view(), y.view(), h.view(), frbm)?;
    let analytic: [(&str, Vec<f64>); 6] = [
        ("w_fx", flat2(&g.w_fx)),
        ("w_fy", flat2(&g.w_fy)),
        ("w_fh", flat2(&g.w_fh)),
        ("b_x", g.b_x.to_vec()),
        ("b_y", g.b_y.to_vec()),
        ("b_h", g.b_h.to_vec()),
    ];
    let mut out = Vec::new();
    for (idx, (name, a)) in analytic.iter().enumerate() {
        let mut probe = frbm.clone();
        let mut values = factored_param(&probe, idx);
        let numeric = numeric_gradient(&mut values, eps, &mut |v| {
            set_factored_param(&mut probe, idx, v);
            -energy3(x.view(), y.view(), h.view(), &probe).expect("shapes checked")
        });
        out.push(CheckResult::new(format!("energy.{name}"), a, &numeric, ENERGY_TOL));
    }
    Ok(out)
}

fn factored_param(r: &FactoredRbm, idx: usize) -> Vec<f64> {
    match idx {
        0 => flat2(&r.w_fx),
        1 => flat2(&r.w_fy),
        2 => flat2(&r.w_fh),
        3 => r.b_x.to_vec(),
        4 => r.b_y.to_vec(),
        _ => r.b_h.to_vec(),
    }
}

fn set_factored_param(r: &mut FactoredRbm, idx: usize, v: &[f64]) {
    let target = match idx {
        0 => r.w_fx.as_slice_mut(),
        1 => r.w_fy.as_slice_mut(),
        2 => r.w_fh.as_slice_mut(),
        3 => r.b_x.as_slice_mut(),
        4 => r.b_y.as_slice_mut(),
        _ => r.b_h.as_slice_mut(),
    };
    target.expect("standard layout").copy_from_slice(v);
}

/// Compares `NesModel::supervised_gradients` with finite differences of the
/// loss for every supervised parameter array.
pub fn check_supervised(
    model: &NesModel,
    tuple: &FeatureTuple,
    objective: Objective,
    eps: f64,
) -> Result<Vec<CheckResult>> {
    let (_, grads) = model.supervised_gradients(tuple, objective)?;
    let cfg = TrainConfig::default();
    let mut out = Vec::new();
    let n_groups = grads.values.len();
    for gi in 0..n_groups {
        let mut probe = model.clone();
        let mut values = probe.supervised_params(&cfg)[gi].values.to_vec();
        let numeric = numeric_gradient(&mut values, eps, &mut |v| {
            probe.supervised_params(&cfg)[gi].values.copy_from_slice(v);
            probe.loss(tuple, objective).expect("shapes checked")
        });
        out.push(CheckResult::new(
            format!("{objective:?}.{}", grads.names[gi]).to_lowercase(),
            &grads.values[gi],
            &numeric,
            MODEL_TOL,
        ));
    }
    Ok(out)
}

/// A small model with all parameters drawn from `O(1)` ranges, so every
/// gradient path carries signal.
pub fn random_instance(variant: Variant, shape: &ModelShape, seed: u64) -> Result<(NesModel, FeatureTuple)> {
    let mut rng = seeded_rng(seed);
    let mut model = NesModel::new(variant, shape, &mut rng)?;
    let cfg = TrainConfig::default();
    for g in model.supervised_params(&cfg) {
        g.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    match &mut model.core {
        Core::Gaussian(r) => {
            r.b_x.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            r.sigma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        }
        Core::Factored(r) => {
            r.w_fx.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            r.w_fy.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            r.sigma_x.mapv_inplace(|_| rng.random_range(0.5..1.5));
            r.sigma_y.mapv_inplace(|_| rng.random_range(0.5..1.5));
        }
    }
    let tuple = FeatureTuple {
        xs: Array2::from_shape_fn((shape.n_ctx, shape.d), |_| rng.random_range(-1.0..1.0)),
        y: Array1::from_shape_fn(shape.m_dim, |_| rng.random_range(-1.0..1.0)),
        target: Array1::from_shape_fn(shape.l, |_| rng.random_range(0.0..1.0)),
        class: rng.random_range(0..shape.n_classes.max(1)),
    };
    Ok((model, tuple))
}

/// A random factored RBM with a binary hidden state and real `x`, `y`.
pub fn random_energy_instance(
    d: usize,
    m: usize,
    k: usize,
    f: usize,
    seed: u64,
) -> (FactoredRbm, Array1<f64>, Array1<f64>, Array1<f64>) {
    let mut rng = seeded_rng(seed);
    let mut u = |n: usize, lo: f64, hi: f64| Array1::from_shape_fn(n, |_| rng.random_range(lo..hi));
    let (b_x, b_y, b_h) = (u(d, -1.0, 1.0), u(m, -1.0, 1.0), u(k, -1.0, 1.0));
    let (sigma_x, sigma_y) = (u(d, 0.5, 1.5), u(m, 0.5, 1.5));
    let (x, y) = (u(d, -2.0, 2.0), u(m, -2.0, 2.0));
    let h = u(k, 0.0, 1.0).mapv(|p| if p < 0.5 { 0.0 } else { 1.0 });
    let mut mat = |r: usize| Array2::from_shape_fn((r, f), |_| rng.random_range(-1.0..1.0));
    let frbm = FactoredRbm {
        w_fx: mat(d),
        w_fy: mat(m),
        w_fh: mat(k),
        b_x,
        b_y,
        b_h,
        sigma_x,
        sigma_y,
    };
    (frbm, x, y, h)
}

/// Every check for one variant over `instances` random models: the energy
/// derivatives (NES-G only) and the supervised paths under both objectives.
pub fn run_all(variant: Variant, shape: &ModelShape, seed: u64, instances: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for i in 0..instances {
        let s = seed.wrapping_add(i as u64);
        let (model, tuple) = random_instance(variant, shape, s)?;
        for objective in [Objective::Envelope, Objective::Classify] {
            if objective == Objective::Classify && shape.n_classes == 0 {
                continue;
            }
            for mut r in check_supervised(&model, &tuple, objective, DEFAULT_EPS)? {
                r.name = format!("{variant}#{i}.{}", r.name);
                out.push(r);
            }
        }
        if variant == Variant::G {
            let (frbm, x, y, h) =
                random_energy_instance(shape.d, shape.m_dim, shape.k, shape.factors, s);
            for mut r in check_energy_gradients(&frbm, &x, &y, &h, DEFAULT_EPS)? {
                r.name = format!("{variant}#{i}.{}", r.name);
                out.push(r);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[1e-3]), 1.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-3]) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let (frbm, x, y, h) = random_energy_instance(3, 3, 3, 4, 1);
        let g = energy_gradients(x.view(), y.view(), h.view(), &frbm).unwrap();
        let mut bad = flat2(&g.w_fx);
        bad[0] += 0.1;
        let mut probe = frbm.clone();
        let mut values = flat2(&probe.w_fx);
        let numeric = numeric_gradient(&mut values, DEFAULT_EPS, &mut |v| {
            set_factored_param(&mut probe, 0, v);
            -energy3(x.view(), y.view(), h.view(), &probe).unwrap()
        });
        assert!(!CheckResult::new("w_fx".into(), &bad, &numeric, ENERGY_TOL).passed);
        assert!(CheckResult::new("w_fx".into(), &flat2(&g.w_fx), &numeric, ENERGY_TOL).passed);
    }

    #[test]
    fn small_models_pass() {
        let shape = ModelShape {
            n_ctx: 2,
            d: 3,
            m_dim: 3,
            k: 4,
            factors: 5,
            l: 3,
            n_classes: 3,
        };
        for v in Variant::ALL {
            let results = run_all(v, &shape, 7, 2).unwrap();
            for r in &results {
                assert!(r.passed, "{} {}", r.name, r.rel_error);
            }
        }
    }
}
