//! Wengert tape: records every differentiable op during the forward pass,
//! then replays backward rules in reverse order to accumulate gradients.
//!
//! The graph is dynamic: a fresh tape is built for every optimization step,
//! and gradients accumulate additively until the optimizer consumes them.
//! A tape and its tensors belong to one thread.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::Array2;
use std::cell::RefCell;
use std::marker::PhantomData;

/// Recording tape for reverse-mode differentiation.
pub struct Tape<F: Scalar> {
    records: RefCell<Vec<Box<dyn Fn()>>>,
    _scalar: PhantomData<fn() -> F>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            _scalar: PhantomData,
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.borrow().is_empty()
    }

    /// Forget all recorded operations without touching gradients.
    pub fn clear(&self) {
        self.records.borrow_mut().clear();
    }

    /// Register a backward rule. Rules run in reverse registration order.
    pub(crate) fn record(&self, rule: impl Fn() + 'static) {
        self.records.borrow_mut().push(Box::new(rule));
    }

    /// Run the backward sweep from a scalar loss.
    ///
    /// Seeds `d loss / d loss = 1` and replays every recorded rule in reverse,
    /// leaving `d loss / d leaf` accumulated on each requires-grad leaf.
    pub fn backward(&self, loss: &Tensor<F>) -> Result<()> {
        let (r, c) = loss.shape();
        if (r, c) != (1, 1) {
            return Err(Error::Validation(format!(
                "backward requires a 1x1 scalar loss, got {r}x{c}"
            )));
        }
        if !loss.requires_grad() {
            // Loss is constant w.r.t. every leaf; nothing to propagate.
            return Ok(());
        }
        loss.accumulate_grad(&Array2::ones((1, 1)));
        let records = self.records.borrow();
        for rule in records.iter().rev() {
            rule();
        }
        Ok(())
    }
}
