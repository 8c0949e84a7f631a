//! Differentiable tensor operations, implemented as methods on [`Tape`].
//!
//! Each op computes its forward value eagerly, wraps it in a fresh output
//! tensor, and (when any input requires grad) records a closure that pulls
//! the output gradient and pushes contributions into the inputs.
//!
//! Binary elementwise ops accept either equal shapes or a `1xN` row vector
//! broadcast over the rows of a `BxN` tensor. No other broadcasting exists.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tape::Tape;
use crate::tensor::Tensor;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

/// Which operand, if any, is a broadcast row vector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Layout {
    Same,
    LhsRow,
    RhsRow,
}

fn elemwise_layout(
    op: &'static str,
    lhs: (usize, usize),
    rhs: (usize, usize),
) -> Result<Layout> {
    if lhs == rhs {
        Ok(Layout::Same)
    } else if lhs.0 == 1 && lhs.1 == rhs.1 {
        Ok(Layout::LhsRow)
    } else if rhs.0 == 1 && rhs.1 == lhs.1 {
        Ok(Layout::RhsRow)
    } else {
        Err(Error::shape(op, lhs, rhs))
    }
}

/// Co-shaped views of the two operands under the row-broadcast rule.
fn broadcast_views<'a, F: Scalar>(
    a: &'a Array2<F>,
    b: &'a Array2<F>,
    layout: Layout,
) -> (ArrayView2<'a, F>, ArrayView2<'a, F>) {
    match layout {
        Layout::Same => (a.view(), b.view()),
        Layout::LhsRow => (a.broadcast(b.dim()).expect("row broadcast"), b.view()),
        Layout::RhsRow => (a.view(), b.broadcast(a.dim()).expect("row broadcast")),
    }
}

/// Collapse a full-shape gradient onto a 1xN row operand by summing rows.
fn sum_rows<F: Scalar>(g: &Array2<F>) -> Array2<F> {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn tracked<F: Scalar>(inputs: &[&Tensor<F>]) -> bool {
    inputs.iter().any(|t| t.requires_grad())
}

impl<F: Scalar> Tape<F> {
    /// Matrix product `a[m,k] . b[k,n] -> [m,n]`.
    pub fn matmul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, ka) = a.shape();
        let (kb, n) = b.shape();
        if ka != kb {
            return Err(Error::shape("matmul", (m, ka), (kb, n)));
        }
        let value = a.value().dot(&*b.value());
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                a.accumulate_grad(&g.dot(&b.value().t()));
                b.accumulate_grad(&a.value().t().dot(&g));
            });
        }
        Ok(out)
    }

    /// Product with a transposed right operand: `a[m,k] . b[n,k]^T -> [m,n]`.
    ///
    /// This is the natural layout for linear layers whose weight is stored
    /// as `[out, in]`.
    pub fn matmul_bt(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, ka) = a.shape();
        let (n, kb) = b.shape();
        if ka != kb {
            return Err(Error::shape("matmul_bt", (m, ka), (n, kb)));
        }
        let value = a.value().dot(&b.value().t());
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                a.accumulate_grad(&g.dot(&*b.value()));
                b.accumulate_grad(&g.t().dot(&*a.value()));
            });
        }
        Ok(out)
    }

    /// Elementwise sum (row broadcast allowed on either side).
    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let layout = elemwise_layout("add", a.shape(), b.shape())?;
        let value = {
            let (av, bv) = (a.value(), b.value());
            let (x, y) = broadcast_views(&av, &bv, layout);
            &x + &y
        };
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                match layout {
                    Layout::Same => {
                        a.accumulate_grad(&g);
                        b.accumulate_grad(&g);
                    }
                    Layout::LhsRow => {
                        a.accumulate_grad(&sum_rows(&g));
                        b.accumulate_grad(&g);
                    }
                    Layout::RhsRow => {
                        a.accumulate_grad(&g);
                        b.accumulate_grad(&sum_rows(&g));
                    }
                }
            });
        }
        Ok(out)
    }

    /// Elementwise difference (row broadcast allowed on either side).
    pub fn sub(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let layout = elemwise_layout("sub", a.shape(), b.shape())?;
        let value = {
            let (av, bv) = (a.value(), b.value());
            let (x, y) = broadcast_views(&av, &bv, layout);
            &x - &y
        };
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let neg = g.mapv(|v| -v);
                match layout {
                    Layout::Same => {
                        a.accumulate_grad(&g);
                        b.accumulate_grad(&neg);
                    }
                    Layout::LhsRow => {
                        a.accumulate_grad(&sum_rows(&g));
                        b.accumulate_grad(&neg);
                    }
                    Layout::RhsRow => {
                        a.accumulate_grad(&g);
                        b.accumulate_grad(&sum_rows(&neg));
                    }
                }
            });
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product (row broadcast allowed on either side).
    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let layout = elemwise_layout("mul", a.shape(), b.shape())?;
        let value = {
            let (av, bv) = (a.value(), b.value());
            let (x, y) = broadcast_views(&av, &bv, layout);
            &x * &y
        };
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let (av, bv) = (a.value_clone(), b.value_clone());
                let (xa, xb) = broadcast_views(&av, &bv, layout);
                let da = &g * &xb;
                let db = &g * &xa;
                match layout {
                    Layout::Same => {
                        a.accumulate_grad(&da);
                        b.accumulate_grad(&db);
                    }
                    Layout::LhsRow => {
                        a.accumulate_grad(&sum_rows(&da));
                        b.accumulate_grad(&db);
                    }
                    Layout::RhsRow => {
                        a.accumulate_grad(&da);
                        b.accumulate_grad(&sum_rows(&db));
                    }
                }
            });
        }
        Ok(out)
    }

    /// Multiply every entry by a fixed scalar.
    pub fn scale(&self, a: &Tensor<F>, k: F) -> Tensor<F> {
        let value = a.value().mapv(|v| v * k);
        let out = Tensor::from_array(value, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                a.accumulate_grad(&g.mapv(|v| v * k));
            });
        }
        out
    }

    /// Elementwise logistic sigmoid.
    pub fn sigmoid(&self, a: &Tensor<F>) -> Tensor<F> {
        let value = a.value().mapv(sigmoid);
        let out = Tensor::from_array(value, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let s = o.value_clone();
                let ds = s.mapv(|v| v * (F::one() - v));
                a.accumulate_grad(&(&g * &ds));
            });
        }
        out
    }

    /// Elementwise rectifier `max(x, 0)`.
    pub fn relu(&self, a: &Tensor<F>) -> Tensor<F> {
        let value = a.value().mapv(|v| v.max(F::zero()));
        let out = Tensor::from_array(value, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let mask = a
                    .value()
                    .mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                a.accumulate_grad(&(&g * &mask));
            });
        }
        out
    }

    /// Elementwise absolute value; subgradient 0 at the origin.
    pub fn abs(&self, a: &Tensor<F>) -> Tensor<F> {
        let value = a.value().mapv(|v| v.abs());
        let out = Tensor::from_array(value, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let sign = a.value().mapv(|v| {
                    if v > F::zero() {
                        F::one()
                    } else if v < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    }
                });
                a.accumulate_grad(&(&g * &sign));
            });
        }
        out
    }

    /// Row-wise softmax with max subtraction; rows sum to one.
    pub fn softmax_rows(&self, a: &Tensor<F>) -> Result<Tensor<F>> {
        let (rows, cols) = a.shape();
        if cols < 2 {
            return Err(Error::Validation(format!(
                "softmax_rows needs at least 2 columns, got {rows}x{cols}"
            )));
        }
        let value = softmax_array(&a.value());
        let out = Tensor::from_array(value, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let s = o.value_clone();
                let mut da = Array2::zeros(s.dim());
                for i in 0..s.nrows() {
                    let (si, gi) = (s.row(i), g.row(i));
                    let dot = si.iter().zip(gi.iter()).map(|(&p, &q)| p * q).sum::<F>();
                    for j in 0..s.ncols() {
                        da[(i, j)] = si[j] * (gi[j] - dot);
                    }
                }
                a.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    /// Mean softmax cross-entropy against one-hot rows, fused in log space.
    ///
    /// Gradient w.r.t. the logits is `(softmax - one_hot) / batch`.
    /// The label tensor is treated as data and receives no gradient.
    pub fn cross_entropy(&self, logits: &Tensor<F>, one_hot: &Tensor<F>) -> Result<Tensor<F>> {
        let (b, c) = logits.shape();
        if one_hot.shape() != (b, c) {
            return Err(Error::shape("cross_entropy", (b, c), one_hot.shape()));
        }
        validate_one_hot(&one_hot.value())?;
        let z = logits.value_clone();
        let y = one_hot.value_clone();
        let mut total = F::zero();
        for i in 0..b {
            let row = z.row(i);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
            let picked = row
                .iter()
                .zip(y.row(i).iter())
                .map(|(&zv, &yv)| zv * yv)
                .sum::<F>();
            total += lse - picked;
        }
        let bn = F::from_usize(b).unwrap();
        let out = Tensor::scalar(total / bn, logits.requires_grad());
        if out.requires_grad() {
            let probs = softmax_array(&z);
            let (logits, o) = (logits.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let scale = g[(0, 0)] / bn;
                let d = (&probs - &y).mapv(|v| v * scale);
                logits.accumulate_grad(&d);
            });
        }
        Ok(out)
    }

    /// Mean binary cross-entropy on probabilities in the open interval (0,1).
    ///
    /// For training prefer [`Tape::bce_with_logits`], which is the log-space
    /// form; this direct form serves score-level diagnostics.
    pub fn binary_cross_entropy(&self, score: &Tensor<F>, label: &Tensor<F>) -> Result<Tensor<F>> {
        let (b, c) = score.shape();
        if c != 1 {
            return Err(Error::Validation(format!(
                "binary_cross_entropy expects a bx1 score column, got {b}x{c}"
            )));
        }
        if label.shape() != (b, 1) {
            return Err(Error::shape("binary_cross_entropy", (b, 1), label.shape()));
        }
        validate_binary_labels(&label.value())?;
        {
            let s = score.value();
            if let Some(bad) = s.iter().find(|&&v| v <= F::zero() || v >= F::one()) {
                return Err(Error::Validation(format!(
                    "binary_cross_entropy scores must lie strictly in (0,1), got {bad}"
                )));
            }
        }
        let s = score.value_clone();
        let d = label.value_clone();
        let bn = F::from_usize(b).unwrap();
        let total = s
            .iter()
            .zip(d.iter())
            .map(|(&sv, &dv)| -(dv * sv.ln() + (F::one() - dv) * (F::one() - sv).ln()))
            .sum::<F>();
        let out = Tensor::scalar(total / bn, score.requires_grad());
        if out.requires_grad() {
            let (score, o) = (score.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let scale = g[(0, 0)] / bn;
                let mut da = Array2::zeros((s.nrows(), 1));
                for i in 0..s.nrows() {
                    let (sv, dv) = (s[(i, 0)], d[(i, 0)]);
                    da[(i, 0)] = (sv - dv) / (sv * (F::one() - sv)) * scale;
                }
                score.accumulate_grad(&da);
            });
        }
        Ok(out)
    }

    /// Mean binary cross-entropy computed from raw logits in log space.
    ///
    /// Per-sample loss `d*softplus(-z) + (1-d)*softplus(z)`; gradient
    /// `(sigmoid(z) - d) / batch`.
    pub fn bce_with_logits(&self, logits: &Tensor<F>, label: &Tensor<F>) -> Result<Tensor<F>> {
        let (b, c) = logits.shape();
        if c != 1 {
            return Err(Error::Validation(format!(
                "bce_with_logits expects a bx1 logit column, got {b}x{c}"
            )));
        }
        if label.shape() != (b, 1) {
            return Err(Error::shape("bce_with_logits", (b, 1), label.shape()));
        }
        validate_binary_labels(&label.value())?;
        let z = logits.value_clone();
        let d = label.value_clone();
        let bn = F::from_usize(b).unwrap();
        let total = z
            .iter()
            .zip(d.iter())
            .map(|(&zv, &dv)| dv * softplus(-zv) + (F::one() - dv) * softplus(zv))
            .sum::<F>();
        let out = Tensor::scalar(total / bn, logits.requires_grad());
        if out.requires_grad() {
            let (logits, o) = (logits.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let scale = g[(0, 0)] / bn;
                let mut dz = Array2::zeros((z.nrows(), 1));
                for i in 0..z.nrows() {
                    dz[(i, 0)] = (sigmoid(z[(i, 0)]) - d[(i, 0)]) * scale;
                }
                logits.accumulate_grad(&dz);
            });
        }
        Ok(out)
    }

    /// Gradient reversal: identity forward, `-lambda * g` backward.
    pub fn grad_reverse(&self, a: &Tensor<F>, lambda: F) -> Result<Tensor<F>> {
        if lambda < F::zero() {
            return Err(Error::Validation(format!(
                "grad_reverse lambda must be non-negative, got {lambda}"
            )));
        }
        let out = Tensor::from_array(a.value_clone(), a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                a.accumulate_grad(&g.mapv(|v| -lambda * v));
            });
        }
        Ok(out)
    }

    /// Detach from the graph: identity forward, zero gradient contribution.
    pub fn stop_gradient(&self, a: &Tensor<F>) -> Tensor<F> {
        Tensor::constant(a.value_clone())
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum_all(&self, a: &Tensor<F>) -> Tensor<F> {
        let total = a.value().iter().copied().sum::<F>();
        let out = Tensor::scalar(total, a.requires_grad());
        if out.requires_grad() {
            let (a, o) = (a.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                let v = g[(0, 0)];
                a.accumulate_grad(&Array2::from_elem(a.shape(), v));
            });
        }
        out
    }

    /// Stack two blocks row-wise: `a` rows first, then `b` rows.
    pub fn concat_rows(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ra, ca) = a.shape();
        let (rb, cb) = b.shape();
        if ca != cb {
            return Err(Error::shape("concat_rows", (ra, ca), (rb, cb)));
        }
        let value = concatenate(Axis(0), &[a.value().view(), b.value().view()])
            .expect("checked column counts");
        let out = Tensor::from_array(value, tracked(&[a, b]));
        if out.requires_grad() {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(g) = o.grad() else { return };
                a.accumulate_grad(&g.slice(s![..ra, ..]).to_owned());
                b.accumulate_grad(&g.slice(s![ra.., ..]).to_owned());
            });
        }
        Ok(out)
    }
}

/// Row-wise softmax of a raw matrix (shared by forward paths and oracles).
pub fn softmax_array<F: Scalar>(z: &Array2<F>) -> Array2<F> {
    let mut out = Array2::zeros(z.dim());
    for i in 0..z.nrows() {
        let row = z.row(i);
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        for j in 0..z.ncols() {
            let e = (row[j] - m).exp();
            out[(i, j)] = e;
            denom += e;
        }
        for j in 0..z.ncols() {
            out[(i, j)] /= denom;
        }
    }
    out
}

fn validate_one_hot<F: Scalar>(y: &Array2<F>) -> Result<()> {
    for (i, row) in y.rows().into_iter().enumerate() {
        let mut ones = 0usize;
        for &v in row.iter() {
            if v == F::one() {
                ones += 1;
            } else if v != F::zero() {
                return Err(Error::Validation(format!(
                    "label row {i} is not one-hot: entry {v} is neither 0 nor 1"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::Validation(format!(
                "label row {i} is not one-hot: found {ones} ones"
            )));
        }
    }
    Ok(())
}

fn validate_binary_labels<F: Scalar>(d: &Array2<F>) -> Result<()> {
    for (i, &v) in d.iter().enumerate() {
        if v != F::zero() && v != F::one() {
            return Err(Error::Validation(format!(
                "binary label at index {i} must be 0 or 1, got {v}"
            )));
        }
    }
    Ok(())
}
