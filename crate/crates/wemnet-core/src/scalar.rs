//! Scalar abstraction: the numeric element type of every tensor.
//!
//! All math in this crate is generic over [`Scalar`], so the same code runs
//! in `f32` or `f64`. Experiments and acceptance tolerances assume the `f64`
//! instantiation (see the type aliases at the crate root).

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + ScalarOperand + Sum<Self> + Debug + Display + 'static
{
    /// Convert an `f64` literal into this scalar type.
    ///
    /// Used for constants written in source (thresholds, learning rates).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in Scalar type")
    }

    /// Lossless-enough view back into `f64` for metrics and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Stable `ln(1 + e^x)`.
pub fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}
