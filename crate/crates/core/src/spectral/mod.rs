//! Lanczos estimation of the top Hessian eigenvalue and the Adam-preconditioned
//! Hessian.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, dot, global_l2_norm, EigenError, SeededRng, SymmetricOperator, TriDiagonal};
use crate::optim::AdamState;

/// Iterations used for image-like models.
pub const IMAGE_LANCZOS_ITERS: usize = 40;
/// Iterations used for sequence-like models.
pub const SEQUENCE_LANCZOS_ITERS: usize = 45;
/// Iterations for slowly converging spectra.
pub const SLOW_LANCZOS_ITERS: usize = 200;
/// Below this the Krylov space is invariant and the iteration stops.
pub const BREAKDOWN_BETA: f64 = 1e-12;

const START_STREAM: u64 = 0x4c41_4e43;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralError {
    EmptyOperator,
    ZeroIterations,
    /// The operator returned NaN/Inf on the Lanczos vector of this step.
    NonFinite { step: usize },
    Eigen(EigenError),
    PreconditionerMismatch { operator: usize, preconditioner: usize },
    NonPositivePreconditioner { index: usize, value: f64 },
    /// No Adam step has been taken yet, so there is no second moment.
    NoAdamHistory,
}

impl fmt::Display for SpectralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralError::EmptyOperator => write!(f, "operator has dimension 0"),
            SpectralError::ZeroIterations => write!(f, "lanczos needs at least one iteration"),
            SpectralError::NonFinite { step } => write!(f, "operator produced non-finite values at lanczos step {step}"),
            SpectralError::Eigen(e) => write!(f, "ritz extraction failed: {e}"),
            SpectralError::PreconditionerMismatch { operator, preconditioner } => write!(
                f,
                "preconditioner has {preconditioner} entries, operator dimension is {operator}"
            ),
            SpectralError::NonPositivePreconditioner { index, value } => {
                write!(f, "preconditioner entry {index} is {value}, must be positive")
            }
            SpectralError::NoAdamHistory => write!(f, "adam state has taken no steps"),
        }
    }
}

impl std::error::Error for SpectralError {}

impl From<EigenError> for SpectralError {
    fn from(e: EigenError) -> Self {
        SpectralError::Eigen(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub num_iters: usize,
    #[serde(default = "default_reorth")]
    pub reorthogonalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_reorth() -> bool {
    true
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig { num_iters: IMAGE_LANCZOS_ITERS, reorthogonalize: true, seed: 0 }
    }
}

impl LanczosConfig {
    pub fn new(num_iters: usize, seed: u64) -> Self {
        LanczosConfig { num_iters, reorthogonalize: true, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub lambda_max: f64,
    /// Ritz values, ascending.
    pub ritz_values: Vec<f64>,
    /// `‖A v − λ v‖` for the normalized top Ritz vector.
    pub residual: f64,
    pub iters_run: usize,
    /// `max_{i≠j} |⟨q_i, q_j⟩|` over the Lanczos basis.
    pub orthogonality_defect: f64,
}

/// Top eigenvalue of a symmetric operator by Lanczos. The iteration count is
/// capped at the operator dimension; it stops early when the next β falls
/// below [`BREAKDOWN_BETA`].
pub fn lanczos_max_eig(
    op: &dyn SymmetricOperator,
    config: &LanczosConfig,
) -> Result<SpectrumEstimate, SpectralError> {
    let n = op.dim();
    if n == 0 {
        return Err(SpectralError::EmptyOperator);
    }
    if config.num_iters == 0 {
        return Err(SpectralError::ZeroIterations);
    }
    let k = config.num_iters.min(n);

    let mut rng = SeededRng::with_stream(config.seed, START_STREAM);
    let mut q = rng.normal_vec(n);
    let norm = global_l2_norm(&q);
    q.iter_mut().for_each(|x| *x /= norm);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    let mut betas: Vec<f64> = Vec::with_capacity(k);
    for j in 0..k {
        let mut w = op.apply(&q);
        if w.len() != n || w.iter().any(|x| !x.is_finite()) {
            return Err(SpectralError::NonFinite { step: j });
        }
        let a = dot(&q, &w) / dot(&q, &q);
        axpy(-a, &q, &mut w);
        if let (Some(prev), Some(&b)) = (basis.last(), betas.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(q);
        alphas.push(a);
        if config.reorthogonalize {
            // Two passes of classical Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                for qi in &basis {
                    let c = dot(qi, &w);
                    axpy(-c, qi, &mut w);
                }
            }
        }
        if j + 1 == k {
            break;
        }
        let b = global_l2_norm(&w);
        if !(b >= BREAKDOWN_BETA) {
            break;
        }
        betas.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        q = w;
    }

    let m = alphas.len();
    let t = TriDiagonal::new(alphas, betas[..m - 1].to_vec())?;
    let (ritz, vectors) = t.eigh()?;
    let top = ritz.len() - 1;
    let lambda_max = ritz[top];

    let mut x = vec![0.0; n];
    for (i, qi) in basis.iter().enumerate() {
        axpy(vectors[[i, top]], qi, &mut x);
    }
    let xn = global_l2_norm(&x);
    x.iter_mut().for_each(|v| *v /= xn);
    let mut r = op.apply(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite { step: m });
    }
    axpy(-lambda_max, &x, &mut r);

    Ok(SpectrumEstimate {
        lambda_max,
        ritz_values: ritz,
        residual: global_l2_norm(&r),
        iters_run: m,
        orthogonality_defect: orthogonality_defect(&basis),
    })
}

fn orthogonality_defect(basis: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..basis.len() {
        for j in 0..i {
            worst = worst.max(dot(&basis[i], &basis[j]).abs());
        }
    }
    worst
}

/// Diagonal preconditioner `D` with strictly positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagPreconditioner {
    d: Vec<f64>,
}

impl DiagPreconditioner {
    pub fn new(d: Vec<f64>) -> Result<Self, SpectralError> {
        if let Some((index, &value)) = d.iter().enumerate().find(|(_, &x)| !(x > 0.0) || !x.is_finite()) {
            return Err(SpectralError::NonPositivePreconditioner { index, value });
        }
        Ok(DiagPreconditioner { d })
    }

    pub fn identity(n: usize) -> Self {
        DiagPreconditioner { d: vec![1.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// `v ↦ D^{-1/2} A D^{-1/2} v`, similar to `D^{-1} A` and hence sharing its
/// eigenvalues.
pub struct PreconditionedOperator<O> {
    inner: O,
    inv_sqrt: Vec<f64>,
}

impl<O: SymmetricOperator> PreconditionedOperator<O> {
    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: SymmetricOperator> SymmetricOperator for PreconditionedOperator<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = v.iter().zip(&self.inv_sqrt).map(|(a, s)| a * s).collect();
        let mut out = self.inner.apply(&scaled);
        out.iter_mut().zip(&self.inv_sqrt).for_each(|(a, s)| *a *= s);
        out
    }
}

pub fn precondition_operator<O: SymmetricOperator>(
    op: O,
    p: &DiagPreconditioner,
) -> Result<PreconditionedOperator<O>, SpectralError> {
    if p.len() != op.dim() {
        return Err(SpectralError::PreconditionerMismatch { operator: op.dim(), preconditioner: p.len() });
    }
    let inv_sqrt = p.d.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(PreconditionedOperator { inner: op, inv_sqrt })
}

/// `d_i = √v̂_i + eps` with `v̂` the bias-corrected second moment.
pub fn adam_preconditioner(state: &AdamState, eps: f64) -> Result<DiagPreconditioner, SpectralError> {
    let v_hat = state.corrected_second_moment().ok_or(SpectralError::NoAdamHistory)?;
    DiagPreconditioner::new(v_hat.iter().map(|v| v.sqrt() + eps).collect())
}
