use std::collections::BTreeMap;

use super::Matrix;
use crate::error::{shape_err, Error, Result};

/// One named parameter tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    value: Matrix,
    grad: Matrix,
}

impl Param {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Flat, name-ordered collection of parameter tensors with paired gradients.
///
/// Names are dotted paths (`phi.l0.w`); the first segment identifies the
/// network group, so `theta`, `phi` and `zeta` can live in one store and be
/// updated selectively.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name.into(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across entries whose name starts with `prefix`.
    pub fn scalar_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(shape_err(
                format!("set_value `{name}`"),
                format!("{:?}", p.value.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite value for `{name}`")));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.grad.shape() != grad.shape() {
            return Err(shape_err(
                format!("gradient for `{name}`"),
                format!("{:?}", p.grad.shape()),
                format!("{:?}", grad.shape()),
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    pub fn zero_grads_with_prefix(&mut self, prefix: &str) {
        for (_, p) in self.entries.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Copies every value from `other` for entries whose name starts with `prefix`.
    pub fn copy_values_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        for (name, p) in other.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.set_value(name, p.value.clone())?;
        }
        Ok(())
    }

    /// Returns the values only, for cheap equality checks between stores.
    pub fn values_equal(&self, other: &ParamStore, prefix: &str) -> bool {
        let lhs = self.entries.iter().filter(|(k, _)| k.starts_with(prefix));
        let rhs = other.entries.iter().filter(|(k, _)| k.starts_with(prefix));
        lhs.map(|(k, p)| (k, &p.value)).eq(rhs.map(|(k, p)| (k, &p.value)))
    }

    /// Flattened values of all entries under `prefix`, in name order.
    pub fn flat_values(&self, prefix: &str) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .flat_map(|(_, p)| p.value.as_slice().iter().copied())
            .collect()
    }

    /// Flattened gradients of all entries under `prefix`, in name order.
    pub fn flat_grads(&self, prefix: &str) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .flat_map(|(_, p)| p.grad.as_slice().iter().copied())
            .collect()
    }

    /// Overwrites the values under `prefix` from a flat vector (name order).
    pub fn set_flat_values(&mut self, prefix: &str, flat: &[f64]) -> Result<()> {
        let expected = self.scalar_count(prefix);
        if flat.len() != expected {
            return Err(shape_err(format!("set_flat_values `{prefix}`"), expected, flat.len()));
        }
        let mut offset = 0;
        for (_, p) in self.entries.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            let n = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
