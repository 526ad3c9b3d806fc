//! Explicit quadratic loss `½ θᵀ H θ`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::numerics::{dense_sym_eigs, relative_asymmetry, EigenError, ASYMMETRY_TOLERANCE};

/// A symmetric matrix given either densely or by its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FormRepr", into = "FormRepr")]
pub enum QuadraticForm {
    Dense(Array2<f64>),
    Diagonal(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FormRepr {
    Dense { matrix: Vec<Vec<f64>> },
    Diagonal { spectrum: Vec<f64> },
}

impl TryFrom<FormRepr> for QuadraticForm {
    type Error = String;

    fn try_from(repr: FormRepr) -> Result<Self, Self::Error> {
        match repr {
            FormRepr::Diagonal { spectrum } => Ok(QuadraticForm::Diagonal(spectrum)),
            FormRepr::Dense { matrix } => {
                let n = matrix.len();
                if matrix.iter().any(|row| row.len() != n) {
                    return Err(format!("dense matrix must be {n}x{n}"));
                }
                let flat: Vec<f64> = matrix.into_iter().flatten().collect();
                let m = Array2::from_shape_vec((n, n), flat).map_err(|e| e.to_string())?;
                let asym = relative_asymmetry(&m);
                if asym > ASYMMETRY_TOLERANCE {
                    return Err(format!("matrix is not symmetric (relative asymmetry {asym:e})"));
                }
                Ok(QuadraticForm::Dense(m))
            }
        }
    }
}

impl From<QuadraticForm> for FormRepr {
    fn from(form: QuadraticForm) -> Self {
        match form {
            QuadraticForm::Diagonal(spectrum) => FormRepr::Diagonal { spectrum },
            QuadraticForm::Dense(m) => FormRepr::Dense {
                matrix: m.rows().into_iter().map(|r| r.to_vec()).collect(),
            },
        }
    }
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        match self {
            QuadraticForm::Dense(m) => m.nrows(),
            QuadraticForm::Diagonal(d) => d.len(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            QuadraticForm::Dense(m) => m
                .rows()
                .into_iter()
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
            QuadraticForm::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            QuadraticForm::Dense(m) => m.clone(),
            QuadraticForm::Diagonal(d) => Array2::from_diag(&ndarray::Array1::from(d.clone())),
        }
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, EigenError> {
        match self {
            QuadraticForm::Dense(m) => dense_sym_eigs(m),
            QuadraticForm::Diagonal(d) => {
                let mut v = d.clone();
                v.sort_by(f64::total_cmp);
                Ok(v)
            }
        }
    }

    /// `s · H`
    pub fn scaled(&self, s: f64) -> QuadraticForm {
        match self {
            QuadraticForm::Dense(m) => QuadraticForm::Dense(m * s),
            QuadraticForm::Diagonal(d) => QuadraticForm::Diagonal(d.iter().map(|x| x * s).collect()),
        }
    }
}

/// Model whose loss ignores the batch: `L(θ) = ½ θᵀ H θ`, initialized at
/// `theta0` (times the init scale α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub hessian: QuadraticForm,
    pub theta0: Vec<f64>,
}

impl QuadraticModel {
    pub fn loss(&self, theta: &[f64]) -> f64 {
        let h_theta = self.hessian.apply(theta);
        0.5 * theta.iter().zip(&h_theta).map(|(a, b)| a * b).sum::<f64>()
    }
}
