//! On-disk layout of a run directory:
//!
//! - `config.toml`: the run configuration
//! - `metrics.jsonl`: one [`MetricsRow`] per line
//! - `summary.json`: outcome, digest and stability constant
//! - `params.f64`: final parameters as little-endian f64
//! - `params.layout.json`: segment names and shapes of `params.f64`
//! - `bn_stats.json`: batch-norm running statistics, when the model has them

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sharplab_core::model::{BatchNormStats, Layout, ParamVector};
use sharplab_core::monitor::{DivergenceEvent, RunClassification};
use sharplab_core::optim::OptimizerKind;

use crate::config::RunConfig;
use crate::error::{io_err, HarnessError};
use crate::train::{MetricsRow, TrainingTrace};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARAMS_FILE: &str = "params.f64";
pub const LAYOUT_FILE: &str = "params.layout.json";
pub const BN_FILE: &str = "bn_stats.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub optimizer: OptimizerKind,
    pub stability_c: f64,
    pub divergence: Option<DivergenceEvent>,
    pub classification: RunClassification,
    pub last_step: u64,
    pub rows: usize,
}

impl RunSummary {
    pub fn of(trace: &TrainingTrace) -> Self {
        RunSummary {
            config_digest: trace.config_digest.clone(),
            optimizer: trace.optimizer,
            stability_c: trace.stability_c,
            divergence: trace.divergence,
            classification: trace.classification,
            last_step: trace.last_step(),
            rows: trace.rows.len(),
        }
    }
}

/// Everything read back from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub config: RunConfig,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub params: ParamVector,
    pub bn_stats: Option<BatchNormStats>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>, HarnessError> {
    serde_json::to_vec_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn metrics_jsonl(rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| HarnessError::Format(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&metrics_jsonl(rows)?).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_params(dir: &Path, params: &ParamVector) -> Result<(), HarnessError> {
    let bytes: Vec<u8> = params.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_file(&dir.join(PARAMS_FILE), &bytes)?;
    write_file(&dir.join(LAYOUT_FILE), &json(params.layout().as_ref())?)
}

pub fn read_params(dir: &Path) -> Result<ParamVector, HarnessError> {
    let layout_path = dir.join(LAYOUT_FILE);
    let text = fs::read(&layout_path).map_err(io_err(&layout_path))?;
    let layout: Layout = serde_json::from_slice(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
    let layout = Layout::from_segments(layout.segments().to_vec()).map_err(|e| HarnessError::Format(e.to_string()))?;
    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if bytes.len() != 8 * layout.total_len() {
        return Err(HarnessError::Format(format!(
            "{}: {} bytes, layout needs {}",
            path.display(),
            bytes.len(),
            8 * layout.total_len()
        )));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(ParamVector::zeros(Arc::new(layout)).with_values(values))
}

/// Writes a complete run directory, creating it if needed.
pub fn write_run(dir: &Path, config: &RunConfig, trace: &TrainingTrace) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(CONFIG_FILE), config.to_toml()?.as_bytes())?;
    write_metrics(&dir.join(METRICS_FILE), &trace.rows)?;
    write_file(&dir.join(SUMMARY_FILE), &json(&RunSummary::of(trace))?)?;
    write_params(dir, &trace.final_params)?;
    if let Some(stats) = &trace.bn_stats {
        write_file(&dir.join(BN_FILE), &json(stats)?)?;
    }
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<StoredRun, HarnessError> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let rows = read_metrics(&dir.join(METRICS_FILE))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let text = fs::read(&summary_path).map_err(io_err(&summary_path))?;
    let summary = serde_json::from_slice(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
    let params = read_params(dir)?;
    let bn_path = dir.join(BN_FILE);
    let bn_stats = if bn_path.exists() {
        let text = fs::read(&bn_path).map_err(io_err(&bn_path))?;
        Some(serde_json::from_slice(&text).map_err(|e| HarnessError::Format(e.to_string()))?)
    } else {
        None
    };
    Ok(StoredRun { config, rows, summary, params, bn_stats })
}
