//! Element-grid containers shared by scoring, data generation and metrics.

use crate::error::{shape_err, Error, Result};

/// Element label over known classes (zero-based), the open-set unknown, and
/// the ignore label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Class(u16),
    Outlier,
    Void,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(k) => Some(k as usize),
            _ => None,
        }
    }

    pub fn is_void(self) -> bool {
        self == Label::Void
    }

    /// File encoding: classes as `k >= 0`, outlier `-1`, void `-2`.
    pub fn to_code(self) -> i32 {
        match self {
            Label::Class(k) => k as i32,
            Label::Outlier => -1,
            Label::Void => -2,
        }
    }

    pub fn from_code(code: i32) -> Result<Self> {
        match code {
            -1 => Ok(Label::Outlier),
            -2 => Ok(Label::Void),
            k if (0..=u16::MAX as i32).contains(&k) => Ok(Label::Class(k as u16)),
            other => Err(Error::Format(format!("invalid label code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    shape: Vec<usize>,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn new(shape: Vec<usize>, labels: Vec<Label>) -> Result<Self> {
        if shape.iter().product::<usize>() != labels.len() {
            return Err(shape_err(format!(
                "label map shape {shape:?} vs {} labels",
                labels.len()
            )));
        }
        Ok(Self { shape, labels })
    }

    pub fn flat(labels: Vec<Label>) -> Self {
        Self {
            shape: vec![labels.len()],
            labels,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-element anomaly scores; higher means more anomalous.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(shape_err(format!(
                "score map shape {shape:?} vs {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score at element {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn flat(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.values)
    }
}
