//! Synthetic classification data and IDX ingestion, split into train and
//! validation sets.

use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sharplab_core::model::{Batch, Labels};
use sharplab_core::numerics::SeededRng;

use crate::error::HarnessError;
use crate::idx::load_idx;

const DATA_STREAM: u64 = 10;
const SPLIT_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    /// Values as loaded (u8 pixels already divided by 255).
    #[default]
    Unit,
    /// Each feature shifted and scaled to zero mean and unit variance using
    /// training-split statistics.
    Standardize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Two isotropic unit-variance Gaussians whose means sit at
    /// `±separation/2` along the first axis.
    TwoGaussians { n: usize, dim: usize, separation: f64 },
    /// Two interleaved 2-D spirals.
    Spirals { n: usize, turns: f64, noise: f64 },
    IdxFiles {
        images_path: PathBuf,
        labels_path: PathBuf,
        #[serde(default)]
        normalization: FeatureScaling,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: f64,
    pub validation: f64,
}

impl Default for Split {
    fn default() -> Self {
        Split { train: 0.8, validation: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Batch,
    pub validation: Batch,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let Split { train, validation } = self.split;
        if !(train > 0.0) || !(validation >= 0.0) || train + validation > 1.0 + 1e-12 {
            return bad(format!("split fractions must be positive and sum to at most 1 (train {train}, validation {validation})"));
        }
        match &self.source {
            DataSource::TwoGaussians { n, dim, separation } => {
                if *n < 2 || *dim == 0 || !separation.is_finite() {
                    return bad("two_gaussians needs n >= 2, dim >= 1 and a finite separation".into());
                }
            }
            DataSource::Spirals { n, turns, noise } => {
                if *n < 2 || !(turns > &0.0) || !(noise >= &0.0) {
                    return bad("spirals needs n >= 2, turns > 0 and noise >= 0".into());
                }
            }
            DataSource::IdxFiles { .. } => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Dataset, HarnessError> {
        self.validate()?;
        let mut rng = SeededRng::with_stream(self.seed, DATA_STREAM);
        let (inputs, labels, scaling) = match &self.source {
            DataSource::TwoGaussians { n, dim, separation } => {
                let (x, y) = two_gaussians(*n, *dim, *separation, &mut rng);
                (x, y, FeatureScaling::Unit)
            }
            DataSource::Spirals { n, turns, noise } => {
                let (x, y) = spirals(*n, *turns, *noise, &mut rng);
                (x, y, FeatureScaling::Unit)
            }
            DataSource::IdxFiles { images_path, labels_path, normalization } => {
                let d = load_idx(images_path, labels_path)?;
                let x = Array2::from_shape_vec((d.rows, d.features), d.images)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                (x, d.labels, *normalization)
            }
        };
        split(inputs, labels, self.split, scaling, self.seed)
    }
}

pub fn two_gaussians(n: usize, dim: usize, separation: f64, rng: &mut SeededRng) -> (Array2<f64>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut x = Array2::zeros((n, dim));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            x[[i, j]] = rng.normal();
        }
        x[[i, 0]] += if y == 0 { -separation / 2.0 } else { separation / 2.0 };
    }
    (x, labels)
}

pub fn spirals(n: usize, turns: f64, noise: f64, rng: &mut SeededRng) -> (Array2<f64>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut x = Array2::zeros((n, 2));
    for (i, &y) in labels.iter().enumerate() {
        let t = rng.uniform().sqrt();
        let angle = 2.0 * PI * turns * t + PI * y as f64;
        x[[i, 0]] = t * angle.cos() + noise * rng.normal();
        x[[i, 1]] = t * angle.sin() + noise * rng.normal();
    }
    (x, labels)
}

fn split(
    inputs: Array2<f64>,
    labels: Vec<usize>,
    fractions: Split,
    scaling: FeatureScaling,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let input_dim = inputs.ncols();
    let all = Batch::new(inputs, Labels::Classes(labels))?;
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::with_stream(seed, SPLIT_STREAM).shuffle(&mut order);
    let n_train = ((n as f64 * fractions.train).floor() as usize).max(1);
    let n_val = ((n as f64 * fractions.validation).floor() as usize).min(n - n_train);
    let mut train = all.select(&order[..n_train]);
    let mut validation = all.select(&order[n_train..n_train + n_val]);
    if scaling == FeatureScaling::Standardize {
        let mean = train.inputs.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let std = train.inputs.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        for b in [&mut train, &mut validation] {
            b.inputs = (&b.inputs - &mean) / &std;
        }
    }
    Ok(Dataset { train, validation, input_dim, num_classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussians(n: usize) -> DatasetSpec {
        DatasetSpec {
            source: DataSource::TwoGaussians { n, dim: 3, separation: 4.0 },
            split: Split { train: 0.75, validation: 0.25 },
            seed: 5,
        }
    }

    #[test]
    fn splits_are_disjoint_and_complete() {
        let d = gaussians(400).build().unwrap();
        assert_eq!(d.train.len(), 300);
        assert_eq!(d.validation.len(), 100);
        assert_eq!((d.input_dim, d.num_classes), (3, 2));
        // Rows are continuous draws, so equal rows would mean a shared example.
        for a in d.train.inputs.rows() {
            for b in d.validation.inputs.rows() {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = gaussians(100).build().unwrap();
        let b = gaussians(100).build().unwrap();
        assert_eq!(a.train.inputs, b.train.inputs);
        assert_eq!(a.validation.classes(), b.validation.classes());
    }

    #[test]
    fn gaussian_means() {
        let mut rng = SeededRng::new(1);
        let (x, y) = two_gaussians(20_000, 2, 6.0, &mut rng);
        let mean0: f64 = y.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| x[[i, 0]]).sum::<f64>() / 10_000.0;
        assert!((mean0 + 3.0).abs() < 0.05);
    }

    #[test]
    fn spiral_shape() {
        let mut rng = SeededRng::new(2);
        let (x, y) = spirals(100, 1.5, 0.0, &mut rng);
        assert_eq!(x.dim(), (100, 2));
        assert!(x.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(y.iter().filter(|&&c| c == 1).count(), 50);
    }

    #[test]
    fn bad_split_rejected() {
        let mut spec = gaussians(10);
        spec.split = Split { train: 0.9, validation: 0.2 };
        assert!(spec.build().is_err());
    }
}
