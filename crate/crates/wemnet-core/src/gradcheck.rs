//! Finite-difference verification of tape gradients.
//!
//! The checker evaluates a scalar loss twice per parameter entry with the
//! entry displaced by `±step` (central differences), restoring the original
//! bit pattern afterwards, and compares against the analytic gradient from
//! one backward pass.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator, guarding near-zero gradients.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of a finite-difference sweep over a set of parameters.
#[derive(Clone, Debug)]
pub struct GradReport<F> {
    /// Total number of scalar entries compared.
    pub entries_checked: usize,
    /// Largest relative error seen across all entries.
    pub max_rel_err: F,
    /// Name of the parameter holding the worst entry.
    pub worst_param: String,
    /// Row/column of the worst entry within that parameter.
    pub worst_index: (usize, usize),
    /// Analytic gradient at the worst entry.
    pub analytic_at_worst: F,
    /// Numeric gradient at the worst entry.
    pub numeric_at_worst: F,
}

impl<F: Scalar> GradReport<F> {
    /// True when every entry agreed within `tol`.
    pub fn passes(&self, tol: F) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error<F: Scalar>(analytic: F, numeric: F) -> F {
    let denom = analytic.abs().max(numeric.abs()).max(F::lit(REL_FLOOR));
    (analytic - numeric).abs() / denom
}

/// Compare analytic gradients against central differences for every entry
/// of every parameter in `params`.
///
/// `eval` must rebuild the computation from the parameters' *current*
/// values and return a fresh tape together with the 1x1 loss; the checker
/// calls it once for the analytic pass and twice per entry for the numeric
/// probes. Parameter values are restored exactly between probes.
pub fn finite_difference_check<F, E>(
    params: &[(&str, &Tensor<F>)],
    step: F,
    mut eval: E,
) -> Result<GradReport<F>>
where
    F: Scalar,
    E: FnMut() -> Result<(Tape<F>, Tensor<F>)>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let (tape, loss) = eval()?;
    tape.backward(&loss)?;
    let analytic: Vec<_> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| ndarray::Array2::zeros(p.shape())))
        .collect();

    let mut report = GradReport {
        entries_checked: 0,
        max_rel_err: F::zero(),
        worst_param: String::new(),
        worst_index: (0, 0),
        analytic_at_worst: F::zero(),
        numeric_at_worst: F::zero(),
    };

    for ((name, p), grads) in params.iter().zip(&analytic) {
        let (rows, cols) = p.shape();
        for i in 0..rows {
            for j in 0..cols {
                let orig = p.value()[(i, j)];
                p.update_value(|v| v[(i, j)] = orig + step);
                let plus = eval()?.1.item();
                p.update_value(|v| v[(i, j)] = orig - step);
                let minus = eval()?.1.item();
                p.update_value(|v| v[(i, j)] = orig);

                let numeric = (plus - minus) / (step + step);
                let a = grads[(i, j)];
                let rel = relative_error(a, numeric);
                report.entries_checked += 1;
                if rel > report.max_rel_err || report.worst_param.is_empty() {
                    report.max_rel_err = rel;
                    report.worst_param = (*name).to_string();
                    report.worst_index = (i, j);
                    report.analytic_at_worst = a;
                    report.numeric_at_worst = numeric;
                }
            }
        }
    }
    Ok(report)
}
