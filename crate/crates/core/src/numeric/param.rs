//! Trainable parameters and the store that owns them.

use crate::error::{Error, Result};
use crate::numeric::rng::Rng;

/// Handle into a [`ParamStore`]. Identity, not value: two ids are the same
/// parameter iff they are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense matrix (rows x cols) or vector (cols = 1) with a same-shape
/// gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    fn push(&mut self, label: &str, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        self.params.push(Parameter {
            label: label.to_string(),
            rows,
            cols,
            values,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Scaled-uniform init: entries in +-sqrt(6 / (fan_in + fan_out)) with
    /// fan_in = cols, fan_out = rows.
    pub fn add_uniform(&mut self, label: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.push(label, rows, cols, values)
    }

    pub fn add_zeros(&mut self, label: &str, rows: usize, cols: usize) -> ParamId {
        self.push(label, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add_values(&mut self, label: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamId> {
        if values.len() != rows * cols {
            return Err(Error::Config(format!(
                "parameter {label}: {} values for shape {rows}x{cols}",
                values.len()
            )));
        }
        Ok(self.push(label, rows, cols, values))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    /// Number of parameters (tensors, not scalars).
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total scalar count across the given parameters.
    pub fn scalar_count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for &id in ids {
            for g in &mut self.params[id.0].grad {
                *g = 0.0;
            }
        }
    }

    pub fn zero_grad_all(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = 0.0;
            }
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    /// values <- values - lr * grad, then grads are zeroed.
    pub fn sgd_step(&mut self, ids: &[ParamId], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("sgd_step: lr must be positive, got {lr}")));
        }
        for &id in ids {
            let p = &mut self.params[id.0];
            for (v, g) in p.values.iter_mut().zip(p.grad.iter_mut()) {
                *v -= lr * *g;
                *g = 0.0;
            }
        }
        Ok(())
    }

    /// Bit pattern of every value in `ids`, in order. For freeze checks.
    pub fn value_bits(&self, ids: &[ParamId]) -> Vec<u64> {
        ids.iter()
            .flat_map(|&id| self.get(id).values.iter().map(|v| v.to_bits()))
            .collect()
    }
}
