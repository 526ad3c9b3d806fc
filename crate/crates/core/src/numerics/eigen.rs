//! Symmetric eigenvalue routines.
//!
//! `tridiag_max_eig` uses Sturm-sequence bisection. The dense solver is the
//! classical Householder tridiagonalization followed by implicit-shift QL
//! (the EISPACK `tred2`/`tql2` pair); it is meant for tests and small
//! problems, not for the spectral hot path.

use std::fmt;

use ndarray::Array2;

/// Largest dimension accepted by the dense solver.
pub const MAX_DENSE_DIM: usize = 2048;

/// Relative asymmetry above which a dense matrix is rejected.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum EigenError {
    NotSquare { rows: usize, cols: usize },
    NotSymmetric { relative_asymmetry: f64 },
    NonFinite,
    TooLarge { dim: usize },
    Empty,
    BadTridiagonal { diagonal: usize, off_diagonal: usize },
    NoConvergence,
}

impl fmt::Display for EigenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EigenError::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            EigenError::NotSymmetric { relative_asymmetry } => {
                write!(f, "matrix is not symmetric (relative asymmetry {relative_asymmetry:e})")
            }
            EigenError::NonFinite => write!(f, "matrix contains non-finite entries"),
            EigenError::TooLarge { dim } => {
                write!(f, "dimension {dim} exceeds dense solver limit {MAX_DENSE_DIM}")
            }
            EigenError::Empty => write!(f, "empty matrix"),
            EigenError::BadTridiagonal { diagonal, off_diagonal } => write!(
                f,
                "tridiagonal with {diagonal} diagonal entries needs {} off-diagonal entries, got {off_diagonal}",
                diagonal.saturating_sub(1)
            ),
            EigenError::NoConvergence => write!(f, "QL iteration did not converge"),
        }
    }
}

impl std::error::Error for EigenError {}

/// Symmetric tridiagonal matrix, as produced by Lanczos.
#[derive(Debug, Clone, PartialEq)]
pub struct TriDiagonal {
    diagonal: Vec<f64>,
    off_diagonal: Vec<f64>,
}

impl TriDiagonal {
    pub fn new(diagonal: Vec<f64>, off_diagonal: Vec<f64>) -> Result<Self, EigenError> {
        if diagonal.is_empty() || off_diagonal.len() + 1 != diagonal.len() {
            return Err(EigenError::BadTridiagonal {
                diagonal: diagonal.len(),
                off_diagonal: off_diagonal.len(),
            });
        }
        if diagonal.iter().chain(&off_diagonal).any(|x| !x.is_finite()) {
            return Err(EigenError::NonFinite);
        }
        Ok(Self { diagonal, off_diagonal })
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn off_diagonal(&self) -> &[f64] {
        &self.off_diagonal
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let k = self.len();
        let mut m = Array2::zeros((k, k));
        for i in 0..k {
            m[[i, i]] = self.diagonal[i];
        }
        for (i, &b) in self.off_diagonal.iter().enumerate() {
            m[[i, i + 1]] = b;
            m[[i + 1, i]] = b;
        }
        m
    }

    /// Interval containing every eigenvalue (union of Gershgorin discs).
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let k = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..k {
            let mut radius = 0.0;
            if i > 0 {
                radius += self.off_diagonal[i - 1].abs();
            }
            if i + 1 < k {
                radius += self.off_diagonal[i].abs();
            }
            lo = lo.min(self.diagonal[i] - radius);
            hi = hi.max(self.diagonal[i] + radius);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via the LDLᵀ
    /// pivots of `T - xI`).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut pivot = 1.0;
        for i in 0..self.len() {
            let coupling = if i == 0 { 0.0 } else { self.off_diagonal[i - 1] };
            pivot = if i == 0 {
                self.diagonal[0] - x
            } else {
                self.diagonal[i] - x - coupling * coupling / pivot
            };
            if pivot == 0.0 {
                pivot = -f64::EPSILON * (x.abs() + coupling.abs()).max(f64::MIN_POSITIVE);
            }
            if pivot < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// All eigenvalues (ascending) and, as columns, the eigenvectors.
    pub fn eigh(&self) -> Result<(Vec<f64>, Array2<f64>), EigenError> {
        let k = self.len();
        let mut d = self.diagonal.clone();
        let mut e = self.off_diagonal.clone();
        e.push(0.0);
        let mut z = Array2::eye(k);
        ql_implicit(&mut d, &mut e, &mut z)?;
        Ok(sort_eigenpairs(d, z))
    }
}

/// Largest eigenvalue of `t`, by bisection on the Sturm count.
pub fn tridiag_max_eig(t: &TriDiagonal) -> f64 {
    let k = t.len();
    if k == 1 {
        return t.diagonal[0];
    }
    let (glo, ghi) = t.gershgorin_bounds();
    let pad = f64::EPSILON * glo.abs().max(ghi.abs()).max(1.0);
    let mut lo = glo - pad;
    let mut hi = ghi + pad;
    for _ in 0..256 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t.count_below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Eigen-decomposition of a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Array2<f64>,
}

/// Relative asymmetry `max |a_ij - a_ji| / max |a_ij|`.
pub fn relative_asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut scale = 0.0f64;
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(m[[i, j]].abs());
            if j > i {
                defect = defect.max((m[[i, j]] - m[[j, i]]).abs());
            }
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        defect / scale
    }
}

fn validate_dense(m: &Array2<f64>) -> Result<(), EigenError> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(EigenError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(EigenError::Empty);
    }
    if rows > MAX_DENSE_DIM {
        return Err(EigenError::TooLarge { dim: rows });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let asym = relative_asymmetry(m);
    if asym > ASYMMETRY_TOLERANCE {
        return Err(EigenError::NotSymmetric { relative_asymmetry: asym });
    }
    Ok(())
}

/// Full eigen-decomposition of a symmetric matrix. Small asymmetries below
/// [`ASYMMETRY_TOLERANCE`] are removed by symmetrizing first.
pub fn dense_sym_eigh(m: &Array2<f64>) -> Result<SymmetricEigen, EigenError> {
    validate_dense(m)?;
    let n = m.nrows();
    let mut v = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            v[[i, j]] = 0.5 * (m[[i, j]] + m[[j, i]]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiagonalize(&mut v, &mut d, &mut e);
    // tred2 leaves e[i] coupling i-1 and i; the QL kernel wants e[i]
    // coupling i and i+1.
    e.rotate_left(1);
    e[n - 1] = 0.0;
    ql_implicit(&mut d, &mut e, &mut v)?;
    let (values, vectors) = sort_eigenpairs(d, v);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn dense_sym_eigs(m: &Array2<f64>) -> Result<Vec<f64>, EigenError> {
    dense_sym_eigh(m).map(|eig| eig.values)
}

fn sort_eigenpairs(values: Vec<f64>, vectors: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = Array2::zeros(vectors.dim());
    for (dst, &src) in order.iter().enumerate() {
        sorted_vectors.column_mut(dst).assign(&vectors.column(src));
    }
    (sorted_values, sorted_vectors)
}

/// Householder reduction of the symmetric matrix in `v` to tridiagonal
/// form. On return `v` holds the accumulated orthogonal transform, `d` the
/// diagonal and `e[1..]` the sub-diagonal (`e[0] = 0`).
fn householder_tridiagonalize(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on a symmetric tridiagonal (`d` diagonal, `e[i]`
/// coupling `i` and `i+1`, `e[n-1]` ignored). Rotations are accumulated
/// into the columns of `z`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut Array2<f64>) -> Result<(), EigenError> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iterations = 0;
            loop {
                iterations += 1;
                if iterations > 60 {
                    return Err(EigenError::NoConvergence);
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..z.nrows() {
                        h = z[[k, i + 1]];
                        z[[k, i + 1]] = s * z[[k, i]] + c * h;
                        z[[k, i]] = c * z[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
