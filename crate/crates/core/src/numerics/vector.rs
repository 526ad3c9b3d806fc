//! Flat 64-bit vectors and the handful of BLAS-1 style kernels the rest of
//! the crate is built on.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

/// A fixed-length sequence of `f64` values.
///
/// Parameters, gradients and Lanczos probe vectors all live in this type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self) -> f64 {
        global_l2_norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

/// Euclidean norm, computed with a max-abs rescaling so that vectors with
/// entries near the overflow threshold still produce a finite result.
pub fn global_l2_norm(v: &[f64]) -> f64 {
    let mut max_abs = 0.0f64;
    for x in v {
        let a = x.abs();
        if a.is_nan() {
            return f64::NAN;
        }
        if a > max_abs {
            max_abs = a;
        }
    }
    if max_abs == 0.0 {
        return 0.0;
    }
    if max_abs.is_infinite() {
        return f64::INFINITY;
    }
    // Skip the rescale in the common range to keep the result bit-identical
    // to the naive formula there.
    if max_abs > 1e-150 && max_abs < 1e150 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let ss: f64 = v.iter().map(|x| (x / max_abs) * (x / max_abs)).sum();
    max_abs * ss.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        assert_eq!(global_l2_norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn zero_vector_has_zero_norm() {
        assert_eq!(global_l2_norm(&[0.0; 7]), 0.0);
        assert_eq!(global_l2_norm(&[]), 0.0);
    }

    #[test]
    fn norm_is_layout_independent() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 0.25];
        let flat: Vec<f64> = a.iter().chain(&b).copied().collect();
        let by_segment = (global_l2_norm(&a).powi(2) + global_l2_norm(&b).powi(2)).sqrt();
        assert!((global_l2_norm(&flat) - by_segment).abs() < 1e-15);
    }

    #[test]
    fn huge_entries_do_not_overflow() {
        let n = global_l2_norm(&[3e200, 4e200]);
        assert!((n / 5e200 - 1.0).abs() < 1e-15);
        assert!(global_l2_norm(&[f64::NAN, 1.0]).is_nan());
    }

    #[test]
    fn axpy_and_dot() {
        let mut y = vec![1.0, 1.0];
        axpy(2.0, &[1.0, -1.0], &mut y);
        assert_eq!(y, vec![3.0, -1.0]);
        assert_eq!(dot(&y, &[1.0, 1.0]), 2.0);
    }
}
