//! Flat parameter vectors with a named layout.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numerics::Vector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segments that exactly partition a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutError {
    DuplicateName(String),
    NotContiguous { name: String, expected_offset: usize, offset: usize },
    LengthMismatch { layout: usize, values: usize },
    UnknownSegment(String),
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutError::DuplicateName(n) => write!(f, "duplicate segment name {n:?}"),
            LayoutError::NotContiguous { name, expected_offset, offset } => write!(
                f,
                "segment {name:?} starts at {offset}, expected {expected_offset}"
            ),
            LayoutError::LengthMismatch { layout, values } => {
                write!(f, "layout covers {layout} values but vector has {values}")
            }
            LayoutError::UnknownSegment(n) => write!(f, "no segment named {n:?}"),
        }
    }
}

impl std::error::Error for LayoutError {}

impl Layout {
    /// Builds a contiguous layout from `(name, shape)` pairs in order.
    pub fn from_shapes<I, S>(shapes: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let segments = shapes
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment { name: name.into(), offset, shape };
                offset += seg.len();
                seg
            })
            .collect();
        Self { segments }
    }

    /// Validates an explicit segment list (e.g. one read from disk).
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self, LayoutError> {
        let mut expected = 0;
        let mut names = std::collections::HashSet::new();
        for seg in &segments {
            if !names.insert(seg.name.as_str()) {
                return Err(LayoutError::DuplicateName(seg.name.clone()));
            }
            if seg.offset != expected {
                return Err(LayoutError::NotContiguous {
                    name: seg.name.clone(),
                    expected_offset: expected,
                    offset: seg.offset,
                });
            }
            expected += seg.len();
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map(|s| s.offset + s.len()).unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Model parameters (or anything shaped like them: gradients, velocities,
/// probe directions).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vector,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vector, layout: Arc<Layout>) -> Result<Self, LayoutError> {
        if values.len() != layout.total_len() {
            return Err(LayoutError::LengthMismatch {
                layout: layout.total_len(),
                values: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self { values: Vector::zeros(layout.total_len()), layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    /// Same layout, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "value length does not match layout");
        Self { values: Vector::from_vec(values), layout: self.layout.clone() }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vector {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Result<&[f64], LayoutError> {
        let seg = self
            .layout
            .get(name)
            .ok_or_else(|| LayoutError::UnknownSegment(name.to_string()))?;
        Ok(&self.values[seg.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64], LayoutError> {
        let range = self
            .layout
            .get(name)
            .ok_or_else(|| LayoutError::UnknownSegment(name.to_string()))?
            .range();
        Ok(&mut self.values[range])
    }

    /// Splits into named, shaped pieces.
    pub fn unflatten(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.layout
            .segments()
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone(), self.values[s.range()].to_vec()))
            .collect()
    }

    /// Inverse of [`unflatten`](Self::unflatten).
    pub fn flatten(pieces: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self, LayoutError> {
        let mut values = Vec::new();
        let mut shapes = Vec::with_capacity(pieces.len());
        for (name, shape, data) in pieces {
            let expected: usize = shape.iter().product();
            if expected != data.len() {
                return Err(LayoutError::LengthMismatch { layout: expected, values: data.len() });
            }
            values.extend(data);
            shapes.push((name, shape));
        }
        let layout = Layout::from_shapes(shapes);
        let names: std::collections::HashSet<_> =
            layout.segments().iter().map(|s| s.name.as_str()).collect();
        if names.len() != layout.segments().len() {
            let dup = layout.segments().iter().map(|s| s.name.clone()).find(|n| {
                layout.segments().iter().filter(|s| &s.name == n).count() > 1
            });
            return Err(LayoutError::DuplicateName(dup.unwrap_or_default()));
        }
        Self::new(Vector::from_vec(values), Arc::new(layout))
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }
}
