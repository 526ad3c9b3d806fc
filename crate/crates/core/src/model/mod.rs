//! Differentiable models, their Hessian-vector products, and diagnostics.

mod batch;
mod mlp;
mod params;
mod quadratic;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use batch::{Batch, Labels};
pub use mlp::{
    logits, mlp_loss_and_grad, Activation, BatchNormStats, LossKind, MlpConfig, MlpCurvature,
    MlpLossGrad, Normalization, BN_EPSILON, MAX_WIDTH,
};
pub use params::{Layout, LayoutError, ParamVector, Segment};
pub use quadratic::{QuadraticForm, QuadraticModel};

use crate::numerics::{debug_check_symmetric, SeededRng, SymmetricOperator};

/// Default `eps` of [`gradient_quotient`].
pub const DEFAULT_GQ_EPS: f64 = 1e-5;

const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidConfig(String),
    Shape(String),
    InvalidLabels(String),
    EmptyBatch,
    /// The forward or backward pass produced NaN/Inf. `loss` is the loss
    /// value observed (itself possibly non-finite).
    NonFinite { loss: f64 },
    /// Accuracy was requested for a model without class outputs.
    NotClassifier,
    Layout(LayoutError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(m) => write!(f, "invalid model config: {m}"),
            ModelError::Shape(m) => write!(f, "shape mismatch: {m}"),
            ModelError::InvalidLabels(m) => write!(f, "invalid labels: {m}"),
            ModelError::EmptyBatch => write!(f, "batch is empty"),
            ModelError::NonFinite { loss } => write!(f, "non-finite values (loss = {loss})"),
            ModelError::NotClassifier => write!(f, "model has no class outputs"),
            ModelError::Layout(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<LayoutError> for ModelError {
    fn from(e: LayoutError) -> Self {
        ModelError::Layout(e)
    }
}

/// Which model is being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Quadratic(QuadraticModel),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Mlp(c) => c.validate(),
            ModelSpec::Quadratic(q) => {
                if q.hessian.dim() == 0 || q.theta0.len() != q.hessian.dim() {
                    return Err(ModelError::InvalidConfig(format!(
                        "quadratic model: theta0 has {} entries, hessian is {}-dimensional",
                        q.theta0.len(),
                        q.hessian.dim()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            ModelSpec::Mlp(c) => c.layout(),
            ModelSpec::Quadratic(q) => Layout::from_shapes([("theta", vec![q.theta0.len()])]),
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, ModelSpec::Mlp(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    LecunNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(default)]
    pub scheme: InitScheme,
    /// Every variable of the default initialization is multiplied by this.
    pub scale_alpha: f64,
    pub seed: u64,
}

impl InitSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.scale_alpha >= 0.0) || !self.scale_alpha.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "init scale must be a finite non-negative number, got {}",
                self.scale_alpha
            )));
        }
        Ok(())
    }
}

/// LeCun-normal initialization scaled by α: weights `α · N(0, 1/fan_in)`,
/// biases and batch-norm shifts zero, batch-norm scales α. Quadratic models
/// start at `α · theta0`.
pub fn init_params(model: &ModelSpec, init: &InitSpec) -> Result<ParamVector, ModelError> {
    model.validate()?;
    init.validate()?;
    let layout = Arc::new(model.layout());
    let alpha = init.scale_alpha;
    let mut params = ParamVector::zeros(layout.clone());
    match model {
        ModelSpec::Quadratic(q) => {
            for (p, t) in params.as_mut_slice().iter_mut().zip(&q.theta0) {
                *p = t * alpha;
            }
        }
        ModelSpec::Mlp(_) => {
            let mut rng = SeededRng::with_stream(init.seed, INIT_STREAM);
            for seg in layout.segments() {
                let values = &mut params.as_mut_slice()[seg.range()];
                if seg.name.ends_with(".weight") {
                    let std = 1.0 / (seg.shape[0] as f64).sqrt();
                    for w in values.iter_mut() {
                        *w = (rng.normal() * std) * alpha;
                    }
                } else if seg.name.ends_with(".bn_scale") {
                    values.fill(alpha);
                }
            }
        }
    }
    Ok(params)
}

/// Loss, gradient, and batch-norm batch statistics when applicable.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamVector,
    pub batch_stats: Option<BatchNormStats>,
}

fn check_params(model: &ModelSpec, params: &ParamVector) -> Result<(), ModelError> {
    if params.len() != model.layout().total_len() {
        return Err(ModelError::Shape(format!(
            "parameter vector has {} entries, model needs {}",
            params.len(),
            model.layout().total_len()
        )));
    }
    Ok(())
}

/// Mean loss over the batch and its gradient. NaN/Inf anywhere is reported
/// as [`ModelError::NonFinite`].
pub fn loss_and_grad(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<LossGrad, ModelError> {
    check_params(model, params)?;
    match model {
        ModelSpec::Mlp(config) => {
            let out = mlp_loss_and_grad(config, params.as_slice(), batch)?;
            Ok(LossGrad {
                loss: out.loss,
                grad: params.with_values(out.grad),
                batch_stats: out.batch_stats,
            })
        }
        ModelSpec::Quadratic(q) => {
            let grad = q.hessian.apply(params.as_slice());
            let loss = 0.5 * params.as_slice().iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { loss });
            }
            Ok(LossGrad { loss, grad: params.with_values(grad), batch_stats: None })
        }
    }
}

/// The training-loss Hessian at a frozen `(params, batch)`, as a
/// matrix-free operator.
pub enum HessianOperator {
    Mlp(Box<MlpCurvature>),
    Quadratic { form: QuadraticForm, loss: f64, grad: Vec<f64> },
}

impl HessianOperator {
    pub fn loss(&self) -> f64 {
        match self {
            HessianOperator::Mlp(c) => c.loss(),
            HessianOperator::Quadratic { loss, .. } => *loss,
        }
    }

    pub fn grad(&self) -> &[f64] {
        match self {
            HessianOperator::Mlp(c) => c.grad(),
            HessianOperator::Quadratic { grad, .. } => grad,
        }
    }

    /// `mean_i |(Hg)_i| / (|g_i| + eps)` at the frozen point.
    pub fn gradient_quotient(&self, eps: f64) -> f64 {
        let g = self.grad();
        if g.is_empty() || g.iter().all(|&x| x == 0.0) {
            return 0.0;
        }
        let hg = self.apply(g);
        let total: f64 = hg.iter().zip(g).map(|(h, gi)| (h / (gi.abs() + eps)).abs()).sum();
        total / g.len() as f64
    }
}

impl SymmetricOperator for HessianOperator {
    fn dim(&self) -> usize {
        match self {
            HessianOperator::Mlp(c) => c.dim(),
            HessianOperator::Quadratic { form, .. } => form.dim(),
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            HessianOperator::Mlp(c) => c.hvp(v),
            HessianOperator::Quadratic { form, .. } => form.apply(v),
        }
    }
}

pub fn hessian_operator(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<HessianOperator, ModelError> {
    check_params(model, params)?;
    let op = match model {
        ModelSpec::Mlp(config) => {
            let curvature = MlpCurvature::new(config, params.as_slice(), batch)?;
            if curvature.grad().iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { loss: curvature.loss() });
            }
            HessianOperator::Mlp(Box::new(curvature))
        }
        ModelSpec::Quadratic(q) => {
            let lg = loss_and_grad(model, params, batch)?;
            HessianOperator::Quadratic {
                form: q.hessian.clone(),
                loss: lg.loss,
                grad: lg.grad.into_values().into_inner(),
            }
        }
    };
    debug_check_symmetric(&op, params.len() as u64);
    Ok(op)
}

/// `H v` for the batch loss at `params`.
pub fn hvp(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
) -> Result<ParamVector, ModelError> {
    if v.len() != params.len() {
        return Err(ModelError::Shape("direction and parameters differ in length".into()));
    }
    check_params(model, params)?;
    let hv = match model {
        ModelSpec::Mlp(config) => {
            MlpCurvature::new(config, params.as_slice(), batch)?.hvp(v.as_slice())
        }
        ModelSpec::Quadratic(q) => q.hessian.apply(v.as_slice()),
    };
    if hv.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite { loss: f64::NAN });
    }
    Ok(params.with_values(hv))
}

/// Curvature-conditioning diagnostic coupling gradient and Hessian:
/// `mean_i |(Hg)_i / (|g_i| + eps)|` with `g` the batch gradient. Zero when
/// the gradient vanishes.
pub fn gradient_quotient(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    eps: f64,
) -> Result<f64, ModelError> {
    if !(eps > 0.0) {
        return Err(ModelError::InvalidConfig(format!("gradient quotient eps must be > 0, got {eps}")));
    }
    Ok(hessian_operator(model, params, batch)?.gradient_quotient(eps))
}

/// Fraction of examples whose arg-max output equals the label; ties go to
/// the lowest class index.
pub fn accuracy(
    model: &ModelSpec,
    params: &ParamVector,
    dataset: &Batch,
    stats: Option<&BatchNormStats>,
) -> Result<f64, ModelError> {
    let ModelSpec::Mlp(config) = model else {
        return Err(ModelError::NotClassifier);
    };
    let classes = dataset.classes().ok_or(ModelError::NotClassifier)?;
    let out = logits(config, params.as_slice(), &dataset.inputs, stats)?;
    Ok(argmax_accuracy(&out, classes))
}

pub(crate) fn argmax_accuracy(outputs: &ndarray::Array2<f64>, classes: &[usize]) -> f64 {
    let correct = outputs
        .rows()
        .into_iter()
        .zip(classes)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    correct as f64 / classes.len() as f64
}
