use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{contract, Result};

/// Named parameter store. Iteration is in name order, so every traversal
/// (optimizer, checkpoint, importance estimation) is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Like `get` but a missing name is a contract violation.
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Same names, same shapes, same order.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, va), (kb, vb))| ka == kb && va.same_shape(vb))
    }

    pub fn check_layout(&self, other: &ModelParams, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(contract(format!("{what}: parameter layout mismatch")))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        self.check_layout(other, "axpy")?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.entries.values_mut() {
            t.scale(alpha);
        }
    }

    /// Elementwise map over every scalar.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.map(&f)))
                .collect(),
        }
    }

    /// Elementwise combination of two stores with identical layout.
    pub fn zip_map(&self, other: &ModelParams, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_layout(other, "zip_map")?;
        let mut out = self.clone();
        for ((_, a), (_, b)) in out.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        self.entries.iter().find_map(|(k, v)| {
            v.data()
                .iter()
                .position(|x| !x.is_finite())
                .map(|i| (k.clone(), i))
        })
    }
}
