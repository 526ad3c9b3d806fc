//! Run configuration, stored as TOML next to each run's metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sharplab_core::model::{InitSpec, ModelSpec};
use sharplab_core::optim::{ClipConfig, OptimizerConfig, Schedule};
use sharplab_core::spectral::LanczosConfig;

use crate::datasets::DatasetSpec;
use crate::error::{io_err, HarnessError};

fn default_cadence() -> u64 {
    100
}
fn default_true() -> bool {
    true
}
fn default_probe() -> usize {
    512
}
fn default_spike() -> f64 {
    10.0
}
fn default_bn_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub init: InitSpec,
    /// Required for MLPs; quadratic models ignore the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub clip: ClipConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Steps between sharpness and validation-accuracy measurements.
    #[serde(default = "default_cadence")]
    pub curvature_cadence: u64,
    #[serde(default)]
    pub lanczos: LanczosConfig,
    /// Seeds minibatch order and the probe-batch choice.
    #[serde(default)]
    pub seed: u64,
    /// When off, only loss, gradient norm and accuracy are recorded.
    #[serde(default = "default_true")]
    pub measure_curvature: bool,
    /// Size of the fixed batch on which the Hessian is evaluated.
    #[serde(default = "default_probe")]
    pub probe_batch_size: usize,
    /// Stop once validation accuracy reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_accuracy: Option<f64>,
    /// An extra sharpness measurement is taken the first time the loss
    /// exceeds this multiple of its running minimum.
    #[serde(default = "default_spike")]
    pub spike_factor: f64,
    /// Overrides the stability constant `c` of the bound `c/η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_c: Option<f64>,
    /// A finite loss above this value ends the run as diverged. Adam's step
    /// is bounded per coordinate, so its blow-ups rarely overflow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_ceiling: Option<f64>,
    /// Momentum of the batch-norm running statistics.
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.model.validate()?;
        self.init.validate()?;
        self.schedule.validate()?;
        self.clip.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.curvature_cadence == 0 {
            return bad("curvature_cadence must be at least 1");
        }
        if self.lanczos.num_iters == 0 {
            return bad("lanczos.num_iters must be at least 1");
        }
        if self.probe_batch_size == 0 {
            return bad("probe_batch_size must be at least 1");
        }
        if !(self.spike_factor > 1.0) {
            return bad("spike_factor must exceed 1");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1)");
        }
        if let Some(c) = self.stability_c {
            if !(c > 0.0) {
                return bad("stability_c must be positive");
            }
        }
        if let Some(c) = self.loss_ceiling {
            if !(c > 0.0) {
                return bad("loss_ceiling must be positive");
            }
        }
        match (&self.model, &self.dataset) {
            (ModelSpec::Mlp(_), None) => return bad("an MLP run needs a dataset"),
            (_, Some(d)) => d.validate()?,
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }
}
