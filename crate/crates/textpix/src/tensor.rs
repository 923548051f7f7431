//! Dense f64 tensors and learnable parameters.
//!
//! Everything numerical in this crate flows through [`Tensor`]: a flat
//! row-major `Vec<f64>` plus a shape. All computation is 64-bit; the models
//! here are small enough that speed is not worth losing the precision the
//! gradient checks rely on.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// A tensor of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor from a flat row-major buffer, checking that the
    /// element count matches the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("zero-sized dimension in shape {shape:?}"),
            ));
        }
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} implies {n} elements but buffer holds {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable element access. The shape cannot change through this view, so
    /// the shape/length invariant is preserved.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major offset of `(i, j)` in a rank-2 tensor.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        i * self.shape[1] + j
    }

    /// Row-major offset of `(i, j, k)` in a rank-3 tensor.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx2(i, j)]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx3(i, j, k)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reshapes in place; the element count must be unchanged.
    pub fn reshape(&mut self, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {} elements as shape {shape:?}", self.data.len()),
            ));
        }
        self.shape = shape.to_vec();
        Ok(())
    }
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// A learnable tensor paired with its gradient accumulator.
///
/// The gradient always has the same shape as the value, and is exactly zero
/// after [`Parameter::zero_grad`] or a completed optimizer step.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// Adds `g` into the gradient accumulator.
    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.grad.shape() {
            return Err(Error::shape(
                "accumulate",
                format!(
                    "gradient shape {:?} does not match parameter {} shape {:?}",
                    g.shape(),
                    self.name,
                    self.grad.shape()
                ),
            ));
        }
        for (acc, v) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *acc += v;
        }
        Ok(())
    }
}
