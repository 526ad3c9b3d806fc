//! Matrix-free symmetric linear maps.

use ndarray::Array2;

use super::rng::SeededRng;
use super::vector::{dot, global_l2_norm};

/// A symmetric linear map `v -> A v` known only through its action.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    /// Returns `A v`. Implementations may return non-finite values (for
    /// example a Hessian evaluated at diverged parameters); callers check.
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (**self).apply(v)
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (**self).apply(v)
    }
}

/// Explicit dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "operator matrix must be square");
        Self { matrix }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

impl SymmetricOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim());
        self.matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `diag(values)`.
#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    values: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl SymmetricOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.values.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim());
        self.values.iter().zip(v).map(|(d, x)| d * x).collect()
    }
}

/// Wraps a closure as an operator. The caller vouches for symmetry.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> SymmetricOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

/// Identity on `R^dim`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl SymmetricOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// Largest relative asymmetry `|<u,Av> - <Au,v>| / (|u||Av| + |Au||v|)`
/// over `pairs` Gaussian probe pairs.
pub fn symmetry_defect(op: &dyn SymmetricOperator, rng: &mut SeededRng, pairs: usize) -> f64 {
    let n = op.dim();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let u = rng.normal_vec(n);
        let v = rng.normal_vec(n);
        let au = op.apply(&u);
        let av = op.apply(&v);
        let lhs = dot(&u, &av);
        let rhs = dot(&au, &v);
        let scale =
            global_l2_norm(&u) * global_l2_norm(&av) + global_l2_norm(&au) * global_l2_norm(&v);
        let defect = if scale > 0.0 {
            (lhs - rhs).abs() / scale
        } else {
            (lhs - rhs).abs()
        };
        if defect.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(defect);
    }
    worst
}

/// Tolerance of the symmetry probe invariant.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

const PROBE_STREAM: u64 = 0x5359_4d4d;

/// Probe count used when operators check themselves in debug builds.
pub const SYMMETRY_PROBE_PAIRS: usize = 8;

/// Debug-build self check run by every operator constructor in the crate.
/// Skipped when the operator produces non-finite values, which the spectral
/// layer reports separately.
pub(crate) fn debug_check_symmetric(op: &dyn SymmetricOperator, seed: u64) {
    if cfg!(debug_assertions) && op.dim() > 0 {
        let mut rng = SeededRng::with_stream(seed, PROBE_STREAM);
        let defect = symmetry_defect(op, &mut rng, SYMMETRY_PROBE_PAIRS);
        assert!(
            !(defect > SYMMETRY_TOLERANCE),
            "operator failed symmetry probe: defect {defect:e}"
        );
    }
}
