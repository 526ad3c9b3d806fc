use ndarray::{Array2, Axis};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class index per example.
    Classes(Vec<usize>),
    /// Regression target row per example.
    Targets(Array2<f64>),
}

/// A minibatch (or a whole dataset): one input row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Labels,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Labels) -> Result<Self, ModelError> {
        let n = inputs.nrows();
        let label_rows = match &labels {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.nrows(),
        };
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if label_rows != n {
            return Err(ModelError::Shape(format!(
                "{n} input rows but {label_rows} labels"
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Sub-batch of the given example indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Batch {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(indices.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(t.select(Axis(0), indices)),
        };
        Batch { inputs, labels }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Classes(c) => Some(c),
            Labels::Targets(_) => None,
        }
    }
}
