use std::collections::BTreeMap;

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// RMSprop without momentum or weight decay.
///
/// `v <- alpha * v + (1 - alpha) * g^2`, `p <- p - lr * g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmspropState {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    square_avg: BTreeMap<String, Matrix>,
}

impl RmspropState {
    pub fn new(lr: f64, alpha: f64, eps: f64) -> Self {
        Self {
            lr,
            alpha,
            eps,
            square_avg: BTreeMap::new(),
        }
    }

    pub fn square_avg(&self, name: &str) -> Option<&Matrix> {
        self.square_avg.get(name)
    }

    /// Updates every parameter in `store`, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step_filtered(store, |_| true)
    }

    /// Updates parameters whose name satisfies `include`, then zeroes all
    /// gradients in the store (gradients of excluded entries are discarded).
    ///
    /// Nothing is updated if any included gradient is non-finite.
    pub fn step_filtered(&mut self, store: &mut ParamStore, include: impl Fn(&str) -> bool) -> Result<()> {
        let names: Vec<String> = store.names().filter(|n| include(n)).map(str::to_string).collect();
        for name in &names {
            if !store.grad(name)?.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        for name in &names {
            let grad = store.grad(name)?.clone();
            let v = self
                .square_avg
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            let value = store.value_mut(name)?;
            for ((p, vi), &g) in value.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(grad.as_slice()) {
                *vi = self.alpha * *vi + (1.0 - self.alpha) * g * g;
                *p -= self.lr * g / (vi.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
