//! Dense 2-D tensor with an accumulated gradient.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc<RefCell<..>>`) to a value
//! matrix plus a lazily allocated gradient of the same shape. Handles are the
//! unit the tape records: an op captures clones of its input/output handles
//! and accumulates gradients through them during the backward sweep.
//!
//! Tensors are confined to one thread; distinct runs get distinct tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::cell::{Ref, RefCell};
use std::rc::Rc;

struct TensorData<F: Scalar> {
    value: Array2<F>,
    grad: Option<Array2<F>>,
    requires_grad: bool,
}

/// Shared handle to a 2-D value matrix and its gradient.
pub struct Tensor<F: Scalar> {
    inner: Rc<RefCell<TensorData<F>>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    /// Wrap a matrix. `requires_grad` marks the tensor as a differentiation leaf.
    pub fn from_array(value: Array2<F>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                value,
                grad: None,
                requires_grad,
            })),
        }
    }

    /// Trainable parameter (requires_grad = true).
    pub fn param(value: Array2<F>) -> Self {
        Self::from_array(value, true)
    }

    /// Non-differentiable constant (requires_grad = false).
    pub fn constant(value: Array2<F>) -> Self {
        Self::from_array(value, false)
    }

    /// Zero-filled constant of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Array2::zeros((rows, cols)))
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<F>], requires_grad: bool) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Validation("ragged rows in tensor literal".into()));
        }
        let flat: Vec<F> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((r, c), flat)
            .map_err(|e| Error::Validation(format!("bad tensor literal: {e}")))?;
        Ok(Self::from_array(arr, requires_grad))
    }

    /// 1x1 tensor holding a single value.
    pub fn scalar(v: F, requires_grad: bool) -> Self {
        Self::from_array(Array2::from_elem((1, 1), v), requires_grad)
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().value.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        let b = self.inner.borrow();
        (b.value.nrows(), b.value.ncols())
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Borrow the value matrix. Keep the borrow short-lived.
    pub fn value(&self) -> Ref<'_, Array2<F>> {
        Ref::map(self.inner.borrow(), |d| &d.value)
    }

    pub fn value_clone(&self) -> Array2<F> {
        self.inner.borrow().value.clone()
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> F {
        let b = self.inner.borrow();
        assert_eq!(
            b.value.dim(),
            (1, 1),
            "item() requires a 1x1 tensor, got {:?}",
            b.value.dim()
        );
        b.value[(0, 0)]
    }

    /// Replace the value in place; the shape must not change.
    pub fn assign(&self, value: Array2<F>) {
        let mut b = self.inner.borrow_mut();
        assert_eq!(b.value.dim(), value.dim(), "assign() must preserve shape");
        b.value = value;
    }

    /// Add `delta` to entry (i, j) of the value. Used by finite differencing
    /// and by the optimizer's in-place updates.
    pub fn nudge(&self, i: usize, j: usize, delta: F) {
        let mut b = self.inner.borrow_mut();
        b.value[(i, j)] += delta;
    }

    /// Mutate the value matrix through a closure.
    pub fn update_value(&self, f: impl FnOnce(&mut Array2<F>)) {
        f(&mut self.inner.borrow_mut().value)
    }

    /// Clone of the accumulated gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Array2<F>> {
        self.inner.borrow().grad.clone()
    }

    /// Take the gradient out, leaving `None`.
    pub fn take_grad(&self) -> Option<Array2<F>> {
        self.inner.borrow_mut().grad.take()
    }

    /// Drop any accumulated gradient.
    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Add `delta` into the gradient, allocating zeros first if absent.
    /// No-op for tensors that do not require grad.
    pub(crate) fn accumulate_grad(&self, delta: &Array2<F>) {
        let mut b = self.inner.borrow_mut();
        if !b.requires_grad {
            return;
        }
        debug_assert_eq!(b.value.dim(), delta.dim(), "gradient shape must match value");
        match &mut b.grad {
            Some(g) => *g += delta,
            None => b.grad = Some(delta.clone()),
        }
    }

    /// Identity of the underlying storage (not value equality).
    pub fn same_storage(&self, other: &Tensor<F>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Fresh tensor with the same value and `requires_grad`, detached storage.
    pub fn deep_clone(&self) -> Self {
        let b = self.inner.borrow();
        Self::from_array(b.value.clone(), b.requires_grad)
    }
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.value.dim())
            .field("requires_grad", &b.requires_grad)
            .field("has_grad", &b.grad.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grad_accumulates_additively() {
        let t: Tensor<f64> = Tensor::param(array![[1.0, 2.0]]);
        t.accumulate_grad(&array![[1.0, 1.0]]);
        t.accumulate_grad(&array![[0.5, -1.0]]);
        assert_eq!(t.grad().unwrap(), array![[1.5, 0.0]]);
    }

    #[test]
    fn constants_ignore_grad() {
        let t: Tensor<f64> = Tensor::constant(array![[1.0]]);
        t.accumulate_grad(&array![[5.0]]);
        assert!(t.grad().is_none());
    }

    #[test]
    fn ragged_literal_rejected() {
        let r: Result<Tensor<f64>> = Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]], false);
        assert!(r.is_err());
    }

    #[test]
    fn clone_shares_storage_deep_clone_does_not() {
        let t: Tensor<f64> = Tensor::param(array![[1.0]]);
        let shared = t.clone();
        let detached = t.deep_clone();
        t.nudge(0, 0, 1.0);
        assert_eq!(shared.value_clone()[(0, 0)], 2.0);
        assert_eq!(detached.value_clone()[(0, 0)], 1.0);
        assert!(t.same_storage(&shared));
        assert!(!t.same_storage(&detached));
    }
}
