//! Exact dynamics on quadratic losses `½ θᵀHθ`.
//!
//! Preconditioned gradient descent `θ_t = (I − ηD⁻¹H) θ_{t−1}` is stable iff
//! every eigenvalue μ of `D⁻¹H` satisfies `|1 − ημ| ≤ 1`. Heavy-ball momentum
//! follows the per-mode companion recursion
//! `θ_{t+1} = (1 + β − ημ) θ_t − β θ_{t−1}`.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::QuadraticForm;
use crate::numerics::{dense_sym_eigs, global_l2_norm, relative_asymmetry, EigenError, ASYMMETRY_TOLERANCE};
use crate::spectral::DiagPreconditioner;

pub const MAX_DENSE_QUADRATIC_DIM: usize = 512;
/// Slack on the spectral radius when deciding stable / marginal / unstable.
pub const PREDICATE_MARGIN: f64 = 1e-10;
/// Relative norm growth that counts as divergence.
pub const GROWTH_SLACK: f64 = 1e-10;
/// Trailing window for the momentum divergence test.
pub const MOMENTUM_WINDOW: usize = 50;
pub const SCAN_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum QuadError {
    InvalidProblem(String),
    InvalidArgument(String),
    Eigen(EigenError),
}

impl fmt::Display for QuadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadError::InvalidProblem(m) => write!(f, "invalid quadratic problem: {m}"),
            QuadError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            QuadError::Eigen(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for QuadError {}

impl From<EigenError> for QuadError {
    fn from(e: EigenError) -> Self {
        QuadError::Eigen(e)
    }
}

/// A PSD quadratic with optional diagonal preconditioner and start point.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    h: QuadraticForm,
    d: Option<DiagPreconditioner>,
    theta0: Vec<f64>,
    /// Eigenvalues of `D⁻¹H`, ascending.
    modes: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(h: QuadraticForm, d: Option<DiagPreconditioner>, theta0: Vec<f64>) -> Result<Self, QuadError> {
        let n = h.dim();
        let bad = |m: String| Err(QuadError::InvalidProblem(m));
        if n == 0 {
            return bad("empty hessian".into());
        }
        if theta0.len() != n {
            return bad(format!("theta0 has {} entries, hessian is {n}-dimensional", theta0.len()));
        }
        if let Some(d) = &d {
            if d.len() != n {
                return bad(format!("preconditioner has {} entries, hessian is {n}-dimensional", d.len()));
            }
        }
        if theta0.iter().any(|x| !x.is_finite()) {
            return bad("theta0 must be finite".into());
        }
        let modes = match &h {
            QuadraticForm::Diagonal(l) => {
                if l.iter().any(|x| !x.is_finite()) {
                    return bad("spectrum must be finite".into());
                }
                let mut m: Vec<f64> = match &d {
                    Some(d) => l.iter().zip(d.values()).map(|(l, d)| l / d).collect(),
                    None => l.clone(),
                };
                m.sort_by(f64::total_cmp);
                m
            }
            QuadraticForm::Dense(m) => {
                if n > MAX_DENSE_QUADRATIC_DIM {
                    return bad(format!("dense hessian capped at {MAX_DENSE_QUADRATIC_DIM}, got {n}; use the diagonal form"));
                }
                let asym = relative_asymmetry(m);
                if asym > ASYMMETRY_TOLERANCE {
                    return bad(format!("hessian is not symmetric (relative asymmetry {asym:e})"));
                }
                match &d {
                    None => dense_sym_eigs(m)?,
                    Some(d) => {
                        let s: Vec<f64> = d.values().iter().map(|x| 1.0 / x.sqrt()).collect();
                        dense_sym_eigs(&Array2::from_shape_fn((n, n), |(i, j)| m[[i, j]] * s[i] * s[j]))?
                    }
                }
            }
        };
        // Positive semidefinite up to rounding of the eigensolver.
        let scale = modes.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if modes[0] < -1e-12 * scale.max(f64::MIN_POSITIVE) {
            return bad(format!("hessian is not positive semidefinite (eigenvalue {:e})", modes[0]));
        }
        Ok(QuadraticProblem { h, d, theta0, modes })
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn hessian(&self) -> &QuadraticForm {
        &self.h
    }

    pub fn preconditioner(&self) -> Option<&DiagPreconditioner> {
        self.d.as_ref()
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    /// Eigenvalues of `D⁻¹H`, ascending.
    pub fn mode_eigenvalues(&self) -> &[f64] {
        &self.modes
    }

    pub fn lambda_max(&self) -> f64 {
        *self.modes.last().expect("non-empty")
    }

    /// `D⁻¹Hθ`
    fn direction(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = self.h.apply(theta);
        if let Some(d) = &self.d {
            g.iter_mut().zip(d.values()).for_each(|(g, d)| *g /= d);
        }
        g
    }

    /// `‖θ‖_D = √(Σ dᵢθᵢ²)`, the norm in which preconditioned GD is a
    /// symmetric iteration.
    fn energy_norm(&self, theta: &[f64]) -> f64 {
        match &self.d {
            None => global_l2_norm(theta),
            Some(d) => {
                let scaled: Vec<f64> = theta.iter().zip(d.values()).map(|(t, d)| t * d.sqrt()).collect();
                global_l2_norm(&scaled)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsResult {
    /// `‖θ_t‖` for t = 0..=steps. After an overflow the remaining entries are
    /// clamped to `f64::MAX`.
    pub norms: Vec<f64>,
    pub diverged: bool,
    /// Per-mode growth factors, in the order of the ascending eigenvalues of
    /// `D⁻¹H`.
    pub amplification: Vec<f64>,
    pub final_theta: Vec<f64>,
}

fn check_args(eta: f64, steps: usize) -> Result<(), QuadError> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(QuadError::InvalidArgument(format!("eta must be finite and non-negative, got {eta}")));
    }
    if steps == 0 {
        return Err(QuadError::InvalidArgument("steps must be at least 1".into()));
    }
    Ok(())
}

fn clamp_rest(norms: &mut Vec<f64>, steps: usize) {
    norms.resize(steps + 1, f64::MAX);
}

/// Preconditioned gradient descent. Diverged when the iterate overflows or
/// the last step grew `‖θ‖_D`; in that norm the iteration is symmetric, so a
/// stable or marginal run never grows.
pub fn gd_simulate(p: &QuadraticProblem, eta: f64, steps: usize) -> Result<DynamicsResult, QuadError> {
    check_args(eta, steps)?;
    let amplification = p.modes.iter().map(|mu| (1.0 - eta * mu).abs()).collect();
    let mut theta = p.theta0.clone();
    let mut norms = vec![global_l2_norm(&theta)];
    let mut energy = p.energy_norm(&theta);
    let mut diverged = false;
    for _ in 0..steps {
        let g = p.direction(&theta);
        theta.iter_mut().zip(&g).for_each(|(t, g)| *t -= eta * g);
        let n = global_l2_norm(&theta);
        if !n.is_finite() {
            diverged = true;
            break;
        }
        norms.push(n);
        let next = p.energy_norm(&theta);
        diverged = next > energy * (1.0 + GROWTH_SLACK);
        energy = next;
    }
    clamp_rest(&mut norms, steps);
    Ok(DynamicsResult { norms, diverged, amplification, final_theta: theta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

/// `ρ = max_i |1 − η μ_i|` over the eigenvalues μ of `D⁻¹H` that are
/// numerically nonzero. Null directions of a PSD Hessian never move, so they
/// are left out; a problem with H = 0 has ρ = 0.
pub fn spectral_radius(p: &QuadraticProblem, eta: f64) -> f64 {
    let floor = 1e-12 * p.lambda_max().abs();
    p.modes.iter().filter(|&&mu| mu > floor).map(|mu| (1.0 - eta * mu).abs()).fold(0.0, f64::max)
}

pub fn stability_predicate(p: &QuadraticProblem, eta: f64) -> Result<Stability, QuadError> {
    stability_predicate_with_margin(p, eta, PREDICATE_MARGIN)
}

pub fn stability_predicate_with_margin(p: &QuadraticProblem, eta: f64, margin: f64) -> Result<Stability, QuadError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(QuadError::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let rho = spectral_radius(p, eta);
    Ok(if rho > 1.0 + margin {
        Stability::Unstable
    } else if rho < 1.0 - margin {
        Stability::Stable
    } else {
        Stability::Marginal
    })
}

/// Spectral radius of the heavy-ball companion matrix
/// `[[1 + β − ημ, −β], [1, 0]]` for one mode.
pub fn momentum_mode_radius(eta: f64, mu: f64, beta: f64) -> f64 {
    let b = 1.0 + beta - eta * mu;
    let disc = b * b - 4.0 * beta;
    if disc < 0.0 {
        beta.sqrt()
    } else {
        let s = disc.sqrt();
        ((b + s) / 2.0).abs().max(((b - s) / 2.0).abs())
    }
}

/// Heavy-ball momentum `v ← βv + D⁻¹Hθ; θ ← θ − ηv`. Diverged on overflow
/// or when the largest norm over the last [`MOMENTUM_WINDOW`] steps exceeds
/// the largest over the window before it.
pub fn momentum_simulate(p: &QuadraticProblem, eta: f64, beta: f64, steps: usize) -> Result<DynamicsResult, QuadError> {
    check_args(eta, steps)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(QuadError::InvalidArgument(format!("beta must lie in [0, 1), got {beta}")));
    }
    let amplification = p.modes.iter().map(|&mu| momentum_mode_radius(eta, mu, beta)).collect();
    let mut theta = p.theta0.clone();
    let mut vel = vec![0.0; theta.len()];
    let mut norms = vec![global_l2_norm(&theta)];
    let mut overflow = false;
    for _ in 0..steps {
        let g = p.direction(&theta);
        for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(&g) {
            *v = beta * *v + g;
            *t -= eta * *v;
        }
        let n = global_l2_norm(&theta);
        if !n.is_finite() {
            overflow = true;
            break;
        }
        norms.push(n);
    }
    let diverged = overflow || window_growth(&norms);
    clamp_rest(&mut norms, steps);
    Ok(DynamicsResult { norms, diverged, amplification, final_theta: theta })
}

fn window_growth(norms: &[f64]) -> bool {
    let w = MOMENTUM_WINDOW.min(norms.len() / 2).max(1);
    let n = norms.len();
    if n < 2 {
        return false;
    }
    let max = |s: &[f64]| s.iter().copied().fold(0.0, f64::max);
    let recent = max(&norms[n - w..]);
    let before = max(&norms[n.saturating_sub(2 * w)..n - w]);
    recent > before * (1.0 + GROWTH_SLACK)
}

/// Largest grid η for which [`momentum_simulate`] over [`SCAN_STEPS`] steps
/// stays bounded; `None` when every grid point diverges.
pub fn empirical_threshold_scan(p: &QuadraticProblem, etas: &[f64], beta: f64) -> Result<Option<f64>, QuadError> {
    if etas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(QuadError::InvalidArgument("eta grid must be strictly ascending".into()));
    }
    let mut best = None;
    for &eta in etas {
        if !momentum_simulate(p, eta, beta, SCAN_STEPS)?.diverged {
            best = Some(eta);
        }
    }
    Ok(best)
}
