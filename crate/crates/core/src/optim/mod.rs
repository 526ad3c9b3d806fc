//! SGD with momentum, Adam, global-norm clipping and learning-rate schedules.

mod schedule;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use schedule::{schedule_lr, Schedule};

use crate::model::{Layout, ParamVector};
use crate::numerics::global_l2_norm;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    LayoutMismatch,
    InvalidConfig(String),
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::LayoutMismatch => write!(f, "gradient, parameters and optimizer state differ in layout"),
            OptimError::InvalidConfig(m) => write!(f, "invalid optimizer config: {m}"),
        }
    }
}

impl std::error::Error for OptimError {}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClipConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_global_norm: Option<f64>,
}

impl ClipConfig {
    pub fn none() -> Self {
        ClipConfig { max_global_norm: None }
    }

    pub fn at(max: f64) -> Self {
        ClipConfig { max_global_norm: Some(max) }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match self.max_global_norm {
            Some(m) if !(m > 0.0) => {
                Err(OptimError::InvalidConfig(format!("clip norm must be positive, got {m}")))
            }
            _ => Ok(()),
        }
    }
}

/// Rescales `g` in place so that its global L2 norm is at most the
/// configured maximum. Returns the norm before clipping.
pub fn clip_in_place(g: &mut [f64], c: &ClipConfig) -> f64 {
    let norm = global_l2_norm(g);
    let Some(max) = c.max_global_norm else {
        return norm;
    };
    if norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|x| *x *= s);
        // Rounding can leave the result an ulp above `max`.
        while global_l2_norm(g) > max {
            g.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
        }
    }
    norm
}

pub fn clip_gradient(g: &ParamVector, c: &ClipConfig) -> ParamVector {
    let mut out = g.clone();
    clip_in_place(out.as_mut_slice(), c);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentumState {
    pub velocity: ParamVector,
    pub beta: f64,
    pub nesterov: bool,
}

impl SgdMomentumState {
    pub fn new(layout: Arc<Layout>, beta: f64, nesterov: bool) -> Result<Self, OptimError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(OptimError::InvalidConfig(format!("momentum must lie in [0, 1), got {beta}")));
        }
        Ok(SgdMomentumState { velocity: ParamVector::zeros(layout), beta, nesterov })
    }
}

/// Heavy-ball: `v ← βv + g; θ ← θ − ηv`. Nesterov: `θ ← θ − η(g + βv)` with
/// the updated `v`. NaN in `grad` propagates into the parameters.
pub fn sgd_step(
    state: &mut SgdMomentumState,
    params: &mut ParamVector,
    grad: &ParamVector,
    eta: f64,
) -> Result<(), OptimError> {
    if !params.same_layout(grad) || !params.same_layout(&state.velocity) {
        return Err(OptimError::LayoutMismatch);
    }
    let beta = state.beta;
    let vel = state.velocity.as_mut_slice();
    for ((p, v), &g) in params.as_mut_slice().iter_mut().zip(vel).zip(grad.as_slice()) {
        *v = beta * *v + g;
        let direction = if state.nesterov { g + beta * *v } else { *v };
        *p -= eta * direction;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(layout: Arc<Layout>, beta1: f64, beta2: f64, eps: f64) -> Result<Self, OptimError> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(OptimError::InvalidConfig(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(eps > 0.0) {
            return Err(OptimError::InvalidConfig(format!("adam eps must be positive, got {eps}")));
        }
        Ok(AdamState {
            m: ParamVector::zeros(layout.clone()),
            v: ParamVector::zeros(layout),
            t: 0,
            beta1,
            beta2,
            eps,
        })
    }

    pub fn with_defaults(layout: Arc<Layout>) -> Self {
        Self::new(layout, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_ADAM_EPS).expect("defaults are valid")
    }

    /// Bias-corrected second moment `v / (1 − β₂ᵗ)`; `None` before the first
    /// step.
    pub fn corrected_second_moment(&self) -> Option<Vec<f64>> {
        if self.t == 0 {
            return None;
        }
        let c = 1.0 - self.beta2.powf(self.t as f64);
        Some(self.v.as_slice().iter().map(|v| v / c).collect())
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamVector,
    grad: &ParamVector,
    eta: f64,
) -> Result<(), OptimError> {
    if !params.same_layout(grad) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(OptimError::LayoutMismatch);
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (((p, m), v), &g) in params.as_mut_slice().iter_mut().zip(m).zip(v).zip(grad.as_slice()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= eta * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Which stability constant applies to an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_true() -> bool {
    true
}
fn default_beta1() -> f64 {
    DEFAULT_BETA1
}
fn default_beta2() -> f64 {
    DEFAULT_BETA2
}
fn default_eps() -> f64 {
    DEFAULT_ADAM_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    SgdMomentum {
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_true")]
        nesterov: bool,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::SgdMomentum { momentum: DEFAULT_MOMENTUM, nesterov: true }
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam { beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, eps: DEFAULT_ADAM_EPS }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerConfig::SgdMomentum { .. } => OptimizerKind::SgdMomentum,
            OptimizerConfig::Adam { .. } => OptimizerKind::Adam,
        }
    }

    pub fn init(&self, layout: Arc<Layout>) -> Result<Optimizer, OptimError> {
        Ok(match *self {
            OptimizerConfig::SgdMomentum { momentum, nesterov } => {
                Optimizer::Sgd(SgdMomentumState::new(layout, momentum, nesterov)?)
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                Optimizer::Adam(AdamState::new(layout, beta1, beta2, eps)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd(SgdMomentumState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, eta: f64) -> Result<(), OptimError> {
        match self {
            Optimizer::Sgd(s) => sgd_step(s, params, grad, eta),
            Optimizer::Adam(s) => adam_step(s, params, grad, eta),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd(_) => OptimizerKind::SgdMomentum,
            Optimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        match self {
            Optimizer::Adam(s) => Some(s),
            Optimizer::Sgd(_) => None,
        }
    }
}
