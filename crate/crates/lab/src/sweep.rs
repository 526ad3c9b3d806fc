//! Grid sweeps over learning rate × batch size × init scale × warmup.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sharplab_core::monitor::RunLabel;

use crate::analysis::{mid_training, normalize_speedup, optimal_lr, steps_to_target, LrOutcome, OptimalLr, REFERENCE_BATCH};
use crate::config::RunConfig;
use crate::error::{io_err, HarnessError};
use crate::persist::write_run;
use crate::train::{prepare, run_prepared, Prepared, TrainingTrace};

fn default_lr_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, 7)
}
fn default_batch_grid() -> Vec<usize> {
    (4..=12).map(|k| 1usize << k).collect()
}
fn default_alphas() -> Vec<f64> {
    vec![1.0]
}
fn default_warmups() -> Vec<u64> {
    vec![0]
}
fn default_replicates() -> u32 {
    3
}
fn default_target() -> f64 {
    0.85
}
fn default_reference() -> usize {
    REFERENCE_BATCH
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_lr_grid")]
    pub lr_grid: Vec<f64>,
    /// Sizes above the training-set size are capped to it.
    #[serde(default = "default_batch_grid")]
    pub batch_grid: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub init_alphas: Vec<f64>,
    #[serde(default = "default_warmups")]
    pub warmup_lengths: Vec<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    /// Validation accuracy that defines steps-to-target.
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
    #[serde(default = "default_reference")]
    pub reference_batch: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lr_grid: default_lr_grid(),
            batch_grid: default_batch_grid(),
            init_alphas: default_alphas(),
            warmup_lengths: default_warmups(),
            replicates: default_replicates(),
            target_accuracy: default_target(),
            reference_batch: default_reference(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.lr_grid.is_empty()
            || self.batch_grid.is_empty()
            || self.init_alphas.is_empty()
            || self.warmup_lengths.is_empty()
        {
            return bad("sweep grids must be non-empty");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.lr_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return bad("learning rates must be positive and finite");
        }
        if self.batch_grid.contains(&0) {
            return bad("batch sizes must be positive");
        }
        if self.init_alphas.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return bad("init scales must be finite and non-negative");
        }
        Ok(())
    }
}

/// A sweep file: `[sweep]` holds the grids, `[base]` the run config every
/// cell starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    #[serde(default)]
    pub sweep: SweepSpec,
    pub base: RunConfig,
}

impl SweepFile {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub warmup: u64,
    pub replicate: u32,
}

impl Cell {
    /// The base config specialized to this cell. Replicates shift the init
    /// and minibatch seeds; the dataset stays fixed.
    pub fn config(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.schedule = base.schedule.with_peak(self.lr).with_warmup(self.warmup);
        c.batch_size = self.batch_size;
        c.init.scale_alpha = self.alpha;
        c.init.seed = base.init.seed.wrapping_add(self.replicate as u64);
        c.seed = base.seed.wrapping_add(self.replicate as u64);
        c
    }
}

/// Cells in a fixed order: alpha, warmup, batch, lr, replicate.
pub fn cells(spec: &SweepSpec, train_size: usize) -> Vec<Cell> {
    let mut batches: Vec<usize> = spec.batch_grid.iter().map(|&b| b.min(train_size)).collect();
    batches.dedup();
    let mut out = Vec::new();
    for &alpha in &spec.init_alphas {
        for &warmup in &spec.warmup_lengths {
            for &batch_size in &batches {
                for &lr in &spec.lr_grid {
                    for replicate in 0..spec.replicates {
                        out.push(Cell { index: out.len(), lr, batch_size, alpha, warmup, replicate });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub warmup: u64,
    pub replicate: u32,
    /// `converged`, `diverged`, `catapult`, or `error`.
    pub label: String,
    pub divergence_step: Option<u64>,
    pub steps_to_target: Option<u64>,
    pub init_lambda1: Option<f64>,
    pub mid_step: Option<u64>,
    pub mid_eta: Option<f64>,
    pub mid_lambda1: Option<f64>,
    pub final_loss: Option<f64>,
    pub last_step: Option<u64>,
    pub error: Option<String>,
}

fn label_name(l: RunLabel) -> &'static str {
    match l {
        RunLabel::Converged => "converged",
        RunLabel::Diverged => "diverged",
        RunLabel::Catapult => "catapult",
    }
}

impl CellResult {
    fn from_trace(cell: &Cell, config: &RunConfig, trace: &TrainingTrace, target: f64) -> Self {
        let mid = mid_training(trace, config.total_steps);
        CellResult {
            index: cell.index,
            lr: cell.lr,
            batch_size: cell.batch_size,
            alpha: cell.alpha,
            warmup: cell.warmup,
            replicate: cell.replicate,
            label: label_name(trace.classification.label).into(),
            divergence_step: trace.divergence.map(|d| d.step),
            steps_to_target: steps_to_target(trace, target),
            init_lambda1: trace.initial_lambda1(),
            mid_step: mid.map(|m| m.step),
            mid_eta: mid.map(|m| m.eta),
            mid_lambda1: mid.map(|m| m.lambda1),
            final_loss: trace.rows.last().map(|r| r.loss).filter(|l| l.is_finite()),
            last_step: Some(trace.last_step()),
            error: None,
        }
    }

    fn failed(cell: &Cell, e: &HarnessError) -> Self {
        CellResult {
            index: cell.index,
            lr: cell.lr,
            batch_size: cell.batch_size,
            alpha: cell.alpha,
            warmup: cell.warmup,
            replicate: cell.replicate,
            label: "error".into(),
            divergence_step: None,
            steps_to_target: None,
            init_lambda1: None,
            mid_step: None,
            mid_eta: None,
            mid_lambda1: None,
            final_loss: None,
            last_step: None,
            error: Some(e.to_string()),
        }
    }

    pub fn diverged(&self) -> bool {
        self.label == "diverged"
    }
}

/// Per (alpha, warmup, batch): the best learning rate over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub alpha: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub eta_star: Option<f64>,
    pub steps: Option<u64>,
    pub largest_non_divergent: Option<bool>,
    pub all_diverged: bool,
    /// `steps / steps at the reference batch`.
    pub normalized_steps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub scaling: Vec<ScalingRow>,
}

/// A learning rate counts as diverged when any replicate diverged; its
/// steps-to-target is the median over replicates when all reached it.
fn lr_outcome(results: &[&CellResult]) -> LrOutcome {
    if results.iter().any(|r| r.diverged() || r.error.is_some()) {
        return LrOutcome::Diverged;
    }
    let mut steps: Option<Vec<u64>> = results.iter().map(|r| r.steps_to_target).collect();
    LrOutcome::Stable(steps.as_mut().map(|s| {
        s.sort_unstable();
        s[(s.len() - 1) / 2]
    }))
}

pub fn batch_scaling(results: &[CellResult], reference_batch: usize) -> Vec<ScalingRow> {
    type Key = (u64, u64, usize);
    let mut groups: BTreeMap<Key, BTreeMap<u64, Vec<&CellResult>>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.alpha.to_bits(), r.warmup, r.batch_size))
            .or_default()
            .entry(r.lr.to_bits())
            .or_default()
            .push(r);
    }
    let mut rows: Vec<ScalingRow> = groups
        .iter()
        .map(|(&(alpha, warmup, batch_size), by_lr)| {
            let outcomes: Vec<(f64, LrOutcome)> =
                by_lr.iter().map(|(&lr, rs)| (f64::from_bits(lr), lr_outcome(rs))).collect();
            let best = optimal_lr(&outcomes);
            let (eta_star, steps, largest) = match best {
                OptimalLr::Found { eta, steps, largest_non_divergent } => {
                    (Some(eta), Some(steps), Some(largest_non_divergent))
                }
                _ => (None, None, None),
            };
            ScalingRow {
                alpha: f64::from_bits(alpha),
                warmup,
                batch_size,
                eta_star,
                steps,
                largest_non_divergent: largest,
                all_diverged: best == OptimalLr::AllDiverged,
                normalized_steps: None,
            }
        })
        .collect();
    let mut by_group: BTreeMap<(u64, u64), BTreeMap<usize, Option<u64>>> = BTreeMap::new();
    for r in &rows {
        by_group.entry((r.alpha.to_bits(), r.warmup)).or_default().insert(r.batch_size, r.steps);
    }
    for r in &mut rows {
        if let Ok(s) = normalize_speedup(&by_group[&(r.alpha.to_bits(), r.warmup)], reference_batch) {
            r.normalized_steps = s.ratios.get(&r.batch_size).copied();
        }
    }
    rows
}

fn run_cell(cell: &Cell, base: &RunConfig, data: &Prepared, target: f64, out: Option<&Path>) -> CellResult {
    let config = cell.config(base);
    let outcome = run_prepared(&config, data).and_then(|trace| {
        if let Some(dir) = out {
            write_run(&cell_dir(dir, cell.index), &config, &trace)?;
        }
        Ok(trace)
    });
    match outcome {
        Ok(trace) => CellResult::from_trace(cell, &config, &trace, target),
        Err(e) => CellResult::failed(cell, &e),
    }
}

pub fn cell_dir(out: &Path, index: usize) -> PathBuf {
    out.join("cells").join(format!("cell_{index:04}"))
}

/// Runs every cell, on `parallel` threads when above 1. Results come back
/// in cell order whatever the scheduling; a failing cell is recorded and
/// the rest continue.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &RunConfig,
    out: Option<&Path>,
    parallel: usize,
) -> Result<SweepReport, HarnessError> {
    spec.validate()?;
    let data = prepare(base)?;
    let grid = cells(spec, data.train.len());
    let target = spec.target_accuracy;
    let results: Vec<CellResult> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| grid.par_iter().map(|c| run_cell(c, base, &data, target, out)).collect())
    } else {
        grid.iter().map(|c| run_cell(c, base, &data, target, out)).collect()
    };
    let scaling = batch_scaling(&results, spec.reference_batch);
    let report = SweepReport { cells: results, scaling };
    if let Some(dir) = out {
        report.write_csvs(dir)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct InitPoint {
    alpha: f64,
    warmup: u64,
    batch_size: usize,
    replicate: u32,
    peak_eta: f64,
    init_lambda1: Option<f64>,
    bound: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct MidPoint {
    alpha: f64,
    warmup: u64,
    batch_size: usize,
    replicate: u32,
    step: Option<u64>,
    eta: Option<f64>,
    lambda1: Option<f64>,
    ratio: Option<f64>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))
}

impl SweepReport {
    /// `cells.csv`: one row per cell with its classification.
    pub fn cells_csv(&self) -> Result<Vec<u8>, HarnessError> {
        csv_bytes(&self.cells)
    }

    /// `init_scatter.csv`: λ₁ at initialization against the peak rate.
    pub fn init_scatter_csv(&self) -> Result<Vec<u8>, HarnessError> {
        csv_bytes(self.cells.iter().map(|c| InitPoint {
            alpha: c.alpha,
            warmup: c.warmup,
            batch_size: c.batch_size,
            replicate: c.replicate,
            peak_eta: c.lr,
            init_lambda1: c.init_lambda1,
            bound: 2.0 / c.lr,
            diverged: c.diverged(),
        }))
    }

    /// `mid_scatter.csv`: mid-training (η, λ₁) and `λ₁ η / 2`.
    pub fn mid_scatter_csv(&self) -> Result<Vec<u8>, HarnessError> {
        csv_bytes(self.cells.iter().map(|c| MidPoint {
            alpha: c.alpha,
            warmup: c.warmup,
            batch_size: c.batch_size,
            replicate: c.replicate,
            step: c.mid_step,
            eta: c.mid_eta,
            lambda1: c.mid_lambda1,
            ratio: c.mid_eta.zip(c.mid_lambda1).map(|(e, l)| e * l / 2.0),
        }))
    }

    /// `batch_scaling.csv`: η* and normalized steps per batch size.
    pub fn scaling_csv(&self) -> Result<Vec<u8>, HarnessError> {
        csv_bytes(&self.scaling)
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, bytes) in [
            ("cells.csv", self.cells_csv()?),
            ("init_scatter.csv", self.init_scatter_csv()?),
            ("mid_scatter.csv", self.mid_scatter_csv()?),
            ("batch_scaling.csv", self.scaling_csv()?),
        ] {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }
}
