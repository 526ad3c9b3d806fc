//! Random test matrices with prescribed spectra.

use ndarray::Array2;

use super::{axpy, dot, global_l2_norm, SeededRng};

/// Orthogonal matrix from Gram-Schmidt (two passes) on Gaussian columns.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Array2<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut c = rng.normal_vec(n);
        for _ in 0..2 {
            for q in &cols {
                let p = dot(q, &c);
                axpy(-p, q, &mut c);
            }
        }
        let norm = global_l2_norm(&c);
        if norm < 1e-8 {
            continue;
        }
        c.iter_mut().for_each(|x| *x /= norm);
        cols.push(c);
    }
    Array2::from_shape_fn((n, n), |(i, j)| cols[j][i])
}

/// `Q diag(spectrum) Qᵀ` for a random orthogonal `Q`, symmetrized exactly.
pub fn symmetric_with_spectrum(spectrum: &[f64], rng: &mut SeededRng) -> Array2<f64> {
    let n = spectrum.len();
    let q = random_orthogonal(n, rng);
    let mut scaled = q.clone();
    for (mut col, &l) in scaled.columns_mut().into_iter().zip(spectrum) {
        col *= l;
    }
    let m = scaled.dot(&q.t());
    (&m + &m.t()) * 0.5
}
