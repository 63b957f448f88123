//! Dense `f64` tensors and a reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain value type: a shape plus a flat row-major buffer,
//! with an optional gradient buffer of the same length. Differentiable
//! computation happens on a [`Graph`](graph::Graph), which owns intermediate
//! node values and runs a single reverse sweep from a scalar loss.
//!
//! Design rules, enforced rather than assumed:
//! - all arithmetic is `f64`; there is no lower-precision path;
//! - shapes must match exactly — no implicit broadcasting anywhere;
//! - gradients accumulate across backward passes until explicitly zeroed.

pub mod graph;
pub(crate) mod kernels;

pub use graph::{Graph, Var};

use crate::error::{Error, Result};

/// A dense tensor: shape, flat row-major values, and an optional gradient
/// buffer managed by the optimizer/graph machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Creates a tensor, checking that the buffer length matches the shape.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-1 scalar wrapper (shape `[1]`).
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable parameter and returns it.
    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    /// The accumulated gradient, if any backward pass has touched this
    /// tensor since the last [`zero_grad`](Self::zero_grad).
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    /// Gradients keep accumulating until explicitly zeroed.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} values, tensor has {}",
                delta.len(),
                self.values.len()
            )));
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Drops the accumulated gradient.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Errors if any value is NaN or infinite; `context` names the tensor.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for &v in &self.values {
            if !v.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite value {v} in {context}"
                )));
            }
        }
        Ok(())
    }
}
