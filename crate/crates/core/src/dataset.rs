//! In-memory labeled dataset with inputs on `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `(channels, height, width)`; vectors use `(d, 1, 1)`.
    pub input_shape: [usize; 3],
    pub classes: usize,
    /// Row-major, `len() * input_len()` values.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    /// Stable per-sample identifiers; noise streams are keyed on these so a
    /// sample sees the same noise regardless of batch composition.
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        input_shape: [usize; 3],
        classes: usize,
        inputs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        let ds = Self {
            input_shape,
            classes,
            inputs,
            labels,
            ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_len();
        if d == 0 || self.classes == 0 {
            return Err(Error::InvalidParameter(
                "dataset needs a non-empty input shape and at least one class".into(),
            ));
        }
        if self.inputs.len() != self.labels.len() * d || self.ids.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} input values and {} ids for {} samples of size {d}",
                self.inputs.len(),
                self.ids.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} outside {} classes",
                self.classes
            )));
        }
        if let Some(v) = self.inputs.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Domain(format!("dataset value {v}")));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.input_len();
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Copies the listed samples, keeping their ids.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.input_len();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        Self {
            input_shape: self.input_shape,
            classes: self.classes,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}
