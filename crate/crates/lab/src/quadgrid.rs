//! Stability tables for an explicit quadratic over a grid of learning rates:
//! the closed-form predicate next to a direct simulation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sharplab_core::model::QuadraticForm;
use sharplab_core::numerics::SeededRng;
use sharplab_core::quadlab::{
    gd_simulate, momentum_mode_radius, momentum_simulate, spectral_radius, QuadraticProblem, PREDICATE_MARGIN,
};
use sharplab_core::spectral::DiagPreconditioner;

use crate::error::{io_err, HarnessError};

fn default_steps() -> usize {
    1000
}

/// Input of `sharplab quad`.
///
/// ```toml
/// etas = [0.1, 0.5, 1.0]
/// beta = 0.9
/// [hessian.diagonal]
/// spectrum = [1.0, 4.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub hessian: QuadraticForm,
    /// Diagonal of `D`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preconditioner: Option<Vec<f64>>,
    /// Start point; a seeded standard normal draw when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Heavy-ball momentum; 0 runs plain preconditioned GD.
    #[serde(default)]
    pub beta: f64,
    pub etas: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadRow {
    pub eta: f64,
    /// `η` times the largest eigenvalue of `D⁻¹H`.
    pub eta_lambda_max: f64,
    /// Largest per-mode amplification over non-null modes.
    pub radius: f64,
    pub predicted: String,
    pub simulated_diverged: bool,
    pub agree: bool,
}

impl QuadGrid {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn problem(&self) -> Result<QuadraticProblem, HarnessError> {
        let n = self.hessian.dim();
        let d = self.preconditioner.clone().map(DiagPreconditioner::new).transpose()?;
        let theta0 = self.theta0.clone().unwrap_or_else(|| SeededRng::new(self.seed).normal_vec(n));
        Ok(QuadraticProblem::new(self.hessian.clone(), d, theta0)?)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.etas.is_empty() || self.etas.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(HarnessError::Config("etas must be a nonempty list of positive numbers".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(HarnessError::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.steps == 0 {
            return Err(HarnessError::Config("steps must be at least 1".into()));
        }
        Ok(())
    }
}

fn radius(p: &QuadraticProblem, eta: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return spectral_radius(p, eta);
    }
    let floor = 1e-12 * p.lambda_max().abs();
    p.mode_eigenvalues()
        .iter()
        .filter(|&&mu| mu > floor)
        .map(|&mu| momentum_mode_radius(eta, mu, beta))
        .fold(0.0, f64::max)
}

fn row(p: &QuadraticProblem, grid: &QuadGrid, eta: f64) -> Result<QuadRow, HarnessError> {
    let rho = radius(p, eta, grid.beta);
    let predicted = if rho > 1.0 + PREDICATE_MARGIN {
        "unstable"
    } else if rho < 1.0 - PREDICATE_MARGIN {
        "stable"
    } else {
        "marginal"
    };
    let sim = if grid.beta == 0.0 {
        gd_simulate(p, eta, grid.steps)?
    } else {
        momentum_simulate(p, eta, grid.beta, grid.steps)?
    };
    Ok(QuadRow {
        eta,
        eta_lambda_max: eta * p.lambda_max(),
        radius: rho,
        predicted: predicted.to_string(),
        simulated_diverged: sim.diverged,
        agree: (predicted == "unstable") == sim.diverged,
    })
}

/// One row per grid η, in grid order.
pub fn stability_table(grid: &QuadGrid, parallel: usize) -> Result<Vec<QuadRow>, HarnessError> {
    grid.validate()?;
    let p = grid.problem()?;
    if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| grid.etas.par_iter().map(|&eta| row(&p, grid, eta)).collect())
    } else {
        grid.etas.iter().map(|&eta| row(&p, grid, eta)).collect()
    }
}

pub fn table_csv(rows: &[QuadRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))
}
