//! The three assembled models and their joint training loop.
//!
//! Forward path shared by every variant:
//!
//! ```text
//! x̂ = Σ_i xs[i] F_i (+ y M for NES-B and NES-G)
//! h = p(h = 1 | x̂)          Gaussian RBM (NES-I, NES-B)
//!   = p(h = 1 | y; x̂)       factored RBM (NES-G)
//! ĥ = h J
//! p(class) = softmax(ĥ W + b)   when a classification head is attached
//! ```
//!
//! Training interleaves, per batch, a CD update of the RBM core with a
//! supervised step that backpropagates through the mean-field hidden layer.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};
use crate::factored_rbm::{
    cd_update3, delta_e_hidden, hidden_conditional3, Cd3Params, FactoredRbm, FactoredVelocity,
};
use crate::gaussian_rbm::{cd_update, hidden_conditional, CdParams, GaussianRbm, RbmVelocity};
use crate::layers::{
    bias_backward, bias_forward, context_backward, context_forward, project_backward,
    project_forward, BiasMap, ContextTransform, SpeechProjection,
};
use crate::math::{argmax, check_len, check_shape, momentum_step, outer, seeded_rng, softmax};
use crate::preprocess::FeatureTuple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "nes-i")]
    I,
    #[serde(rename = "nes-b")]
    B,
    #[serde(rename = "nes-g")]
    G,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::I, Variant::B, Variant::G];

    /// Whether the spoken-EEG vector enters the model.
    pub fn uses_spoken(self) -> bool {
        self != Variant::I
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::I => 0,
            Variant::B => 1,
            Variant::G => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::I => "nes-i",
            Variant::B => "nes-b",
            Variant::G => "nes-g",
        })
    }
}

impl FromStr for Variant {
    type Err = NesError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nes-i" | "i" => Ok(Variant::I),
            "nes-b" | "b" => Ok(Variant::B),
            "nes-g" | "g" => Ok(Variant::G),
            other => Err(NesError::config(format!(
                "unknown variant '{other}' (expected nes-i, nes-b or nes-g)"
            ))),
        }
    }
}

/// Dimensions of every layer in the chain `n_ctx x D -> K -> L -> n_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_ctx: usize,
    pub d: usize,
    /// Spoken-EEG dimension `M`; ignored by NES-I.
    pub m_dim: usize,
    /// Hidden units `K`.
    pub k: usize,
    /// Factor count `F` of the gated core; ignored by NES-I and NES-B.
    pub factors: usize,
    /// Envelope length `L`.
    pub l: usize,
    /// Classes of the softmax head; 0 means no head.
    pub n_classes: usize,
}

impl ModelShape {
    /// Shape matching a feature tuple, with `F = K`.
    pub fn for_tuple(tuple: &FeatureTuple, k: usize, n_classes: usize) -> Self {
        Self {
            n_ctx: tuple.xs.nrows(),
            d: tuple.xs.ncols(),
            m_dim: tuple.y.len(),
            k,
            factors: k,
            l: tuple.target.len(),
            n_classes,
        }
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let mut required = vec![
            ("context count", self.n_ctx),
            ("feature dimension", self.d),
            ("hidden units", self.k),
            ("envelope length", self.l),
        ];
        if variant.uses_spoken() {
            required.push(("spoken-EEG dimension", self.m_dim));
        }
        if variant == Variant::G {
            required.push(("factor count", self.factors));
        }
        match required.iter().find(|(_, n)| *n == 0) {
            Some((what, _)) => Err(NesError::config(format!("{what} must be positive"))),
            None => Ok(()),
        }
    }
}

/// The RBM in the middle of the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Core {
    Gaussian(GaussianRbm),
    Factored(FactoredRbm),
}

impl Core {
    pub fn n_hidden(&self) -> usize {
        match self {
            Core::Gaussian(r) => r.n_hidden(),
            Core::Factored(r) => r.n_hidden(),
        }
    }
}

/// Softmax classification head on top of `ĥ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    /// `L x n_classes`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl SoftmaxHead {
    pub fn random(l: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (l as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((l, n_classes), |_| rng.random_range(-a..=a)),
            b: Array1::zeros(n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NesModel {
    pub variant: Variant,
    pub context: ContextTransform,
    pub bias_map: Option<BiasMap>,
    pub projection: SpeechProjection,
    pub core: Core,
    pub head: Option<SoftmaxHead>,
}

/// Everything the forward pass computes for one tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub x_hat: Array1<f64>,
    /// Mean-field hidden activations.
    pub h: Array1<f64>,
    /// Projected speech features `ĥ`.
    pub h_out: Array1<f64>,
    pub class_probs: Option<Array1<f64>>,
}

/// What the supervised phase optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Mean squared error `‖ĥ - target‖² / L`.
    #[default]
    Envelope,
    /// Cross-entropy of the softmax head against the tuple's class.
    Classify,
}

impl FromStr for Objective {
    type Err = NesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "envelope" => Ok(Objective::Envelope),
            "classify" => Ok(Objective::Classify),
            other => Err(NesError::config(format!(
                "unknown objective '{other}' (expected envelope or classify)"
            ))),
        }
    }
}

/// A named flat view of one trainable array.
#[derive(Debug)]
pub struct ParamGroup<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    /// Weight-decay coefficient applied by the optimiser.
    pub decay: f64,
}

/// Gradients in the order of [`NesModel::supervised_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedGrads {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SupervisedGrads {
    fn add_scaled(&mut self, scale: f64, other: &SupervisedGrads) {
        for (acc, g) in self.values.iter_mut().zip(&other.values) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
    }

    fn scale(&mut self, s: f64) {
        self.values.iter_mut().flatten().for_each(|v| *v *= s);
    }
}

fn flat(a: Array2<f64>) -> Vec<f64> {
    a.into_raw_vec_and_offset().0
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl NesModel {
    /// Randomly initialised model; `F_i` and `M` uniform in `±1/√D`, `J` in
    /// `±1/√K`, RBM weights as in the core constructors.
    pub fn new(variant: Variant, shape: &ModelShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate(variant)?;
        let context = ContextTransform::random(shape.n_ctx, shape.d, rng);
        let bias_map = variant
            .uses_spoken()
            .then(|| BiasMap::random(shape.m_dim, shape.d, rng));
        let core = match variant {
            Variant::G => Core::Factored(FactoredRbm::new(
                shape.d,
                shape.m_dim,
                shape.k,
                shape.factors,
                rng,
            )),
            _ => Core::Gaussian(GaussianRbm::new(shape.d, shape.k, rng)),
        };
        let projection = SpeechProjection::random(shape.k, shape.l, rng);
        let head = (shape.n_classes > 0).then(|| SoftmaxHead::random(shape.l, shape.n_classes, rng));
        let model = Self {
            variant,
            context,
            bias_map,
            projection,
            core,
            head,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn shape(&self) -> ModelShape {
        let (m_dim, factors) = match &self.core {
            Core::Factored(r) => (r.n_visible(), r.n_factors()),
            Core::Gaussian(_) => (self.bias_map.as_ref().map_or(0, |b| b.m.nrows()), 0),
        };
        ModelShape {
            n_ctx: self.context.n_ctx(),
            d: self.context.dim(),
            m_dim,
            k: self.core.n_hidden(),
            factors,
            l: self.projection.j.ncols(),
            n_classes: self.head.as_ref().map_or(0, |h| h.n_classes()),
        }
    }

    /// Checks that the variant has the right parts and that shapes chain.
    pub fn validate(&self) -> Result<()> {
        let d = self.context.dim();
        match (self.variant, &self.bias_map, &self.core) {
            (Variant::I, None, Core::Gaussian(_)) => {}
            (Variant::B, Some(_), Core::Gaussian(_)) => {}
            (Variant::G, Some(_), Core::Factored(_)) => {}
            (v, _, _) => {
                return Err(NesError::config(format!(
                    "{v} needs {} and a {} core",
                    if v.uses_spoken() { "a bias map" } else { "no bias map" },
                    if v == Variant::G { "factored" } else { "Gaussian" }
                )))
            }
        }
        match &self.core {
            Core::Gaussian(r) => {
                r.validate()?;
                check_len("RBM visible units", r.n_visible(), d)?;
            }
            Core::Factored(r) => {
                r.validate()?;
                check_len("factored RBM input units", r.n_input(), d)?;
            }
        }
        if let Some(bm) = &self.bias_map {
            check_len("bias map columns", bm.m.ncols(), d)?;
            if let Core::Factored(r) = &self.core {
                check_len("bias map rows", bm.m.nrows(), r.n_visible())?;
            }
        }
        check_len("projection rows", self.projection.j.nrows(), self.core.n_hidden())?;
        if let Some(head) = &self.head {
            check_shape(
                "softmax weights",
                head.w.dim(),
                (self.projection.j.ncols(), head.b.len()),
            )?;
            if head.b.is_empty() {
                return Err(NesError::config("softmax head needs at least one class"));
            }
        }
        Ok(())
    }

    fn spoken<'t>(&self, tuple: &'t FeatureTuple) -> Result<ArrayView1<'t, f64>> {
        if tuple.y.is_empty() {
            return Err(NesError::config(format!(
                "{} needs a spoken-EEG vector but the tuple has none",
                self.variant
            )));
        }
        Ok(tuple.y.view())
    }

    pub fn forward(&self, tuple: &FeatureTuple) -> Result<Forward> {
        let mut x_hat = context_forward(tuple.xs.view(), &self.context)?;
        if let Some(bm) = &self.bias_map {
            x_hat += &bias_forward(self.spoken(tuple)?, bm)?;
        }
        let h = match &self.core {
            Core::Gaussian(r) => hidden_conditional(x_hat.view(), r)?,
            Core::Factored(r) => hidden_conditional3(x_hat.view(), self.spoken(tuple)?, r)?,
        };
        let h_out = project_forward(h.view(), &self.projection)?;
        let class_probs = self
            .head
            .as_ref()
            .map(|head| softmax((h_out.dot(&head.w) + &head.b).view()));
        Ok(Forward {
            x_hat,
            h,
            h_out,
            class_probs,
        })
    }

    /// `ĥ` min-max normalised to `[0, 1]`; a constant `ĥ` maps to zeros.
    pub fn recover_envelope(&self, tuple: &FeatureTuple) -> Result<Array1<f64>> {
        Ok(min_max(self.forward(tuple)?.h_out))
    }

    /// Predicted class index and the class probabilities.
    pub fn classify(&self, tuple: &FeatureTuple) -> Result<(usize, Array1<f64>)> {
        if self.head.is_none() {
            return Err(NesError::config("model has no softmax head to classify with"));
        }
        let probs = self.forward(tuple)?.class_probs.expect("head present");
        Ok((argmax(probs.view()), probs))
    }

    /// Trainable arrays touched by the supervised phase, in a fixed order:
    /// context matrices, bias map, projection, RBM hidden-side weights and
    /// bias, softmax weights and bias.
    pub fn supervised_params(&mut self, cfg: &TrainConfig) -> Vec<ParamGroup<'_>> {
        let mut groups = Vec::new();
        for (i, f) in self.context.mats.iter_mut().enumerate() {
            groups.push(ParamGroup {
                name: format!("context[{i}]"),
                values: slice_mut(f),
                decay: cfg.decay_context,
            });
        }
        if let Some(bm) = &mut self.bias_map {
            groups.push(ParamGroup {
                name: "bias_map".into(),
                values: slice_mut(&mut bm.m),
                decay: cfg.decay_other,
            });
        }
        groups.push(ParamGroup {
            name: "projection".into(),
            values: slice_mut(&mut self.projection.j),
            decay: cfg.decay_representation,
        });
        let (w_name, w, b_h) = match &mut self.core {
            Core::Gaussian(r) => ("rbm.w", &mut r.w, &mut r.b_h),
            Core::Factored(r) => ("rbm.w_fh", &mut r.w_fh, &mut r.b_h),
        };
        groups.push(ParamGroup {
            name: w_name.into(),
            values: slice_mut(w),
            decay: cfg.decay_other,
        });
        groups.push(ParamGroup {
            name: "rbm.b_h".into(),
            values: slice_mut(b_h),
            decay: 0.0,
        });
        if let Some(head) = &mut self.head {
            groups.push(ParamGroup {
                name: "softmax.w".into(),
                values: slice_mut(&mut head.w),
                decay: cfg.decay_other,
            });
            groups.push(ParamGroup {
                name: "softmax.b".into(),
                values: slice_mut(&mut head.b),
                decay: 0.0,
            });
        }
        groups
    }

    /// Supervised loss of one tuple.
    pub fn loss(&self, tuple: &FeatureTuple, objective: Objective) -> Result<f64> {
        let fwd = self.forward(tuple)?;
        Ok(self.loss_and_output_grad(&fwd, tuple, objective)?.0)
    }

    /// Returns the loss and `dL/dĥ`; for classification also the head gradients.
    fn loss_and_output_grad(
        &self,
        fwd: &Forward,
        tuple: &FeatureTuple,
        objective: Objective,
    ) -> Result<(f64, Array1<f64>, Option<(Array2<f64>, Array1<f64>)>)> {
        match objective {
            Objective::Envelope => {
                check_len("envelope target", tuple.target.len(), fwd.h_out.len())?;
                let diff = &fwd.h_out - &tuple.target;
                let l = diff.len() as f64;
                Ok((diff.dot(&diff) / l, diff * (2.0 / l), None))
            }
            Objective::Classify => {
                let head = self
                    .head
                    .as_ref()
                    .ok_or_else(|| NesError::config("classification objective needs a softmax head"))?;
                let probs = fwd.class_probs.as_ref().expect("head present");
                if tuple.class >= probs.len() {
                    return Err(NesError::data(format!(
                        "class {} outside the head's {} classes",
                        tuple.class,
                        probs.len()
                    )));
                }
                // log-softmax computed directly so a vanishing probability stays finite
                let logits = fwd.h_out.dot(&head.w) + &head.b;
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.mapv(|z| (z - max).exp()).sum().ln();
                let loss = lse - logits[tuple.class];
                let mut dz = probs.clone();
                dz[tuple.class] -= 1.0;
                let dw = outer(fwd.h_out.view(), dz.view());
                let dh_out = head.w.dot(&dz);
                Ok((loss, dh_out, Some((dw, dz))))
            }
        }
    }

    /// Loss and gradients of one tuple with respect to [`Self::supervised_params`].
    ///
    /// The hidden layer is treated as its mean-field value. In NES-G only the
    /// hidden-side factor weights and hidden bias receive gradients from the
    /// RBM; the input and visible factor matrices learn through CD alone.
    pub fn supervised_gradients(
        &self,
        tuple: &FeatureTuple,
        objective: Objective,
    ) -> Result<(f64, SupervisedGrads)> {
        let fwd = self.forward(tuple)?;
        let (loss, dh_out, head_grads) = self.loss_and_output_grad(&fwd, tuple, objective)?;
        let (d_j, dh) = project_backward(dh_out.view(), fwd.h.view(), &self.projection)?;
        let da = &dh * &fwd.h.mapv(|p| p * (1.0 - p));

        let (d_core_w, dx_hat) = match &self.core {
            Core::Gaussian(r) => {
                let scaled = &fwd.x_hat / &r.sigma;
                (outer(scaled.view(), da.view()), r.w.dot(&da) / &r.sigma)
            }
            Core::Factored(r) => {
                let y = self.spoken(tuple)?;
                let fx = (&fwd.x_hat / &r.sigma_x).dot(&r.w_fx);
                let fy = (&y / &r.sigma_y).dot(&r.w_fy);
                let d_wfh = outer(da.view(), (&fx * &fy).view());
                let g = da.dot(&r.w_fh);
                (d_wfh, r.w_fx.dot(&(g * &fy)) / &r.sigma_x)
            }
        };

        let ctx = context_backward(dx_hat.view(), tuple.xs.view(), &self.context)?;
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (i, g) in ctx.mats.into_iter().enumerate() {
            names.push(format!("context[{i}]"));
            values.push(flat(g));
        }
        if let Some(bm) = &self.bias_map {
            let (d_m, _) = bias_backward(dx_hat.view(), self.spoken(tuple)?, bm)?;
            names.push("bias_map".into());
            values.push(flat(d_m));
        }
        names.push("projection".into());
        values.push(flat(d_j));
        names.push(match self.core {
            Core::Gaussian(_) => "rbm.w".into(),
            Core::Factored(_) => "rbm.w_fh".into(),
        });
        values.push(flat(d_core_w));
        names.push("rbm.b_h".into());
        values.push(da.to_vec());
        if let Some((dw, db)) = head_grads {
            names.push("softmax.w".into());
            values.push(flat(dw));
            names.push("softmax.b".into());
            values.push(db.to_vec());
        } else if self.head.is_some() {
            // the head is idle under the envelope objective
            let head = self.head.as_ref().expect("checked");
            names.push("softmax.w".into());
            values.push(vec![0.0; head.w.len()]);
            names.push("softmax.b".into());
            values.push(vec![0.0; head.b.len()]);
        }
        Ok((loss, SupervisedGrads { names, values }))
    }

    /// Pre-activations of the hidden layer (useful for diagnostics).
    pub fn hidden_input(&self, tuple: &FeatureTuple) -> Result<Array1<f64>> {
        let fwd = self.forward(tuple)?;
        match &self.core {
            Core::Gaussian(r) => r.hidden_input(fwd.x_hat.view()),
            Core::Factored(r) => delta_e_hidden(fwd.x_hat.view(), self.spoken(tuple)?, r),
        }
    }

    /// Name of the first parameter array holding a non-finite value.
    fn first_non_finite(&self) -> Option<String> {
        fn ok<'a>(v: impl IntoIterator<Item = &'a f64>) -> bool {
            v.into_iter().all(|x| x.is_finite())
        }
        if let Some(i) = self.context.mats.iter().position(|f| !ok(f)) {
            return Some(format!("context[{i}]"));
        }
        let mut checks = vec![("bias_map", self.bias_map.as_ref().is_none_or(|b| ok(&b.m)))];
        match &self.core {
            Core::Gaussian(r) => checks.extend([
                ("rbm.w", ok(&r.w)),
                ("rbm.b_h", ok(&r.b_h)),
                ("rbm.b_x", ok(&r.b_x)),
            ]),
            Core::Factored(r) => checks.extend([
                ("rbm.w_fx", ok(&r.w_fx)),
                ("rbm.w_fy", ok(&r.w_fy)),
                ("rbm.w_fh", ok(&r.w_fh)),
                ("rbm.b_x", ok(&r.b_x)),
                ("rbm.b_y", ok(&r.b_y)),
                ("rbm.b_h", ok(&r.b_h)),
            ]),
        }
        checks.push(("projection", ok(&self.projection.j)));
        checks.push(("softmax", self.head.as_ref().is_none_or(|h| ok(&h.w) && ok(&h.b))));
        checks
            .into_iter()
            .find(|(_, fine)| !fine)
            .map(|(name, _)| name.to_string())
    }
}

fn min_max(v: Array1<f64>) -> Array1<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array1::zeros(v.len());
    }
    v.mapv(|x| (x - lo) / (hi - lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Supervised learning rate.
    pub lr: f64,
    /// CD learning rate; `None` means `lr / 20`.
    pub cd_lr: Option<f64>,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub momentum_ramp_epochs: usize,
    pub decay_context: f64,
    /// Decay of the speech projection `J`.
    pub decay_representation: f64,
    pub decay_other: f64,
    pub cd_steps: usize,
    /// Barrier strength on negative factor weights (NES-G only).
    pub alpha: f64,
    /// Norm cap on the factored CD estimate (NES-G only); `None` disables it.
    pub cd_max_norm: Option<f64>,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 2000,
            lr: 0.1,
            cd_lr: None,
            momentum_start: 0.5,
            momentum_end: 0.9,
            momentum_ramp_epochs: 30,
            decay_context: 1e-4,
            decay_representation: 1e-5,
            decay_other: 1e-4,
            cd_steps: 1,
            alpha: 0.0,
            cd_max_norm: Some(5.0),
            seed: 0,
            objective: Objective::Envelope,
        }
    }
}

impl TrainConfig {
    /// Defaults with the variant's learning rate (0.02 for NES-G).
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            lr: if variant == Variant::G { 0.02 } else { 0.1 },
            ..Self::default()
        }
    }

    /// CD at the full supervised rate collapses the Gaussian core's hidden
    /// units and destabilises the gated core on unnormalised `x̂`, so the
    /// default runs it twenty times slower.
    pub fn cd_lr(&self) -> f64 {
        self.cd_lr.unwrap_or(0.05 * self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [("lr", self.lr), ("cd_lr", self.cd_lr())];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(NesError::config(format!("{name} must be a finite non-negative rate, got {v}")));
        }
        for (name, m) in [("momentum_start", self.momentum_start), ("momentum_end", self.momentum_end)] {
            if !(0.0..1.0).contains(&m) {
                return Err(NesError::config(format!("{name} must lie in [0, 1), got {m}")));
            }
        }
        let decays = [self.decay_context, self.decay_representation, self.decay_other, self.alpha];
        if decays.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(NesError::config("weight decays and alpha must be finite and non-negative"));
        }
        if let Some(c) = self.cd_max_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(NesError::config(format!("cd_max_norm must be positive, got {c}")));
            }
        }
        if self.batch_size == 0 {
            return Err(NesError::config("batch size must be positive"));
        }
        if self.cd_steps == 0 {
            return Err(NesError::config("cd_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Linear ramp from `momentum_start` to `momentum_end` over
/// `momentum_ramp_epochs`, constant afterwards.
pub fn momentum_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let frac = if cfg.momentum_ramp_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / cfg.momentum_ramp_epochs as f64).min(1.0)
    };
    cfg.momentum_start + (cfg.momentum_end - cfg.momentum_start) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean supervised loss over the epoch, measured before each batch's update.
    pub loss: f64,
    /// Mean first-step CD reconstruction error.
    pub recon_error: f64,
    /// Training accuracy under the classification objective.
    pub accuracy: Option<f64>,
}

/// Optimiser state carried across batches.
struct TrainState {
    supervised: Vec<Vec<f64>>,
    core: CoreVelocity,
}

enum CoreVelocity {
    Gaussian(RbmVelocity),
    Factored(FactoredVelocity),
}

/// Joint unsupervised-supervised training.
///
/// Each epoch visits the data in a seeded random order. For every batch the
/// RBM core first takes a CD step on the batch's `x̂` (and `y` for NES-G), then
/// all supervised parameters take one momentum step on the batch-mean loss.
pub fn train_joint(
    model: &mut NesModel,
    data: &[FeatureTuple],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(NesError::data("training set is empty"));
    }
    if cfg.objective == Objective::Classify && model.head.is_none() {
        return Err(NesError::config("classification objective needs a softmax head"));
    }
    // shape errors surface here rather than mid-epoch
    model.forward(&data[0])?;

    let mut rng = seeded_rng(cfg.seed);
    let mut state = TrainState {
        supervised: model
            .supervised_params(cfg)
            .iter()
            .map(|g| vec![0.0; g.values.len()])
            .collect(),
        core: match &model.core {
            Core::Gaussian(r) => CoreVelocity::Gaussian(RbmVelocity::zeros_like(r)),
            Core::Factored(r) => CoreVelocity::Factored(FactoredVelocity::zeros_like(r)),
        },
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let momentum = momentum_at(epoch, cfg);
        let (mut loss_sum, mut recon_sum, mut correct) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tuples: Vec<&FeatureTuple> = batch.iter().map(|&i| &data[i]).collect();
            let recon = cd_phase(model, &tuples, cfg, momentum, &mut state.core, &mut rng)?;
            recon_sum += recon * tuples.len() as f64;

            let (loss, hits) = supervised_phase(model, &tuples, cfg, momentum, &mut state.supervised)?;
            let broken = model.first_non_finite();
            if !loss.is_finite() || broken.is_some() {
                let detail = match broken {
                    Some(name) => format!("{name} became non-finite (batch loss {loss})"),
                    None => format!("batch loss {loss}"),
                };
                return Err(NesError::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("{detail}; try a smaller learning rate"),
                });
            }
            loss_sum += loss;
            correct += hits;
        }
        let n = data.len() as f64;
        history.push(EpochMetrics {
            epoch,
            loss: loss_sum / n,
            recon_error: recon_sum / n,
            accuracy: (cfg.objective == Objective::Classify).then(|| correct as f64 / n),
        });
    }
    Ok(history)
}

fn cd_phase(
    model: &mut NesModel,
    tuples: &[&FeatureTuple],
    cfg: &TrainConfig,
    momentum: f64,
    velocity: &mut CoreVelocity,
    rng: &mut impl Rng,
) -> Result<f64> {
    let fwd: Vec<Array1<f64>> = tuples
        .iter()
        .map(|t| model.forward(t).map(|f| f.x_hat))
        .collect::<Result<_>>()?;
    let views: Vec<_> = fwd.iter().map(|x| x.view()).collect();
    let xs = ndarray::stack(Axis(0), &views).map_err(|e| NesError::config(e.to_string()))?;
    let stats = match (&mut model.core, velocity) {
        (Core::Gaussian(r), CoreVelocity::Gaussian(v)) => {
            let p = CdParams {
                k_steps: cfg.cd_steps,
                lr: cfg.cd_lr(),
                momentum,
                weight_decay: cfg.decay_other,
            };
            cd_update(xs.view(), r, &p, v, rng)?
        }
        (Core::Factored(r), CoreVelocity::Factored(v)) => {
            let ys: Vec<_> = tuples.iter().map(|t| t.y.view()).collect();
            let ys = ndarray::stack(Axis(0), &ys).map_err(|e| NesError::config(e.to_string()))?;
            let p = Cd3Params {
                k_steps: cfg.cd_steps,
                lr: cfg.cd_lr(),
                momentum,
                weight_decay: cfg.decay_other,
                alpha: cfg.alpha,
                max_grad_norm: cfg.cd_max_norm,
            };
            cd_update3(xs.view(), ys.view(), r, &p, v, rng)?
        }
        _ => unreachable!("velocity built from the same core"),
    };
    Ok(stats.recon_error)
}

/// Returns the summed loss over the batch and the number of correct predictions.
fn supervised_phase(
    model: &mut NesModel,
    tuples: &[&FeatureTuple],
    cfg: &TrainConfig,
    momentum: f64,
    velocity: &mut [Vec<f64>],
) -> Result<(f64, usize)> {
    let mut total: Option<SupervisedGrads> = None;
    let mut loss = 0.0;
    let mut hits = 0;
    for t in tuples {
        if cfg.objective == Objective::Classify {
            hits += usize::from(model.classify(t)?.0 == t.class);
        }
        let (l, g) = model.supervised_gradients(t, cfg.objective)?;
        loss += l;
        match &mut total {
            Some(acc) => acc.add_scaled(1.0, &g),
            None => total = Some(g),
        }
    }
    let mut grads = total.expect("non-empty batch");
    grads.scale(1.0 / tuples.len() as f64);
    for ((group, g), v) in model
        .supervised_params(cfg)
        .into_iter()
        .zip(&grads.values)
        .zip(velocity.iter_mut())
    {
        momentum_step(group.values, v, g, cfg.lr, momentum, group.decay);
    }
    Ok((loss, hits))
}
