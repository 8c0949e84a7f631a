//! Weight-based mask computation.
//!
//! A head's weight matrix is scored entrywise by `sigmoid(|w|)`; entries
//! strictly above the mean score are masked 1. The domain head (one row)
//! yields a channel mask `1 x N_h`; the classifier yields a per-class mask
//! `N_c x N_h`, combined per sample into a batch mask by one-hot labels
//! (source) or pseudo-scores (target).
//!
//! All functions here are pure: masks are plain arrays, carry no gradient,
//! and are recomputed from live weights whenever a forward pass needs them.

use ndarray::{concatenate, Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// How the classifier threshold is aggregated.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ThresholdMode {
    /// One scalar threshold, the mean of `sigmoid(|W|)` over all entries.
    Global,
    /// One threshold per class row (alternative reading; off by default).
    PerRow,
}

/// Whether batch-mask combination weights are hard labels or pseudo-scores.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MaskOrigin {
    /// Rows must be exact one-hot vectors.
    Source,
    /// Rows must be simplex vectors (nonnegative, summing to 1 within 1e-6).
    Target,
}

/// Binary channel mask from the domain head weight, with its threshold.
#[derive(Clone, Debug)]
pub struct DomainMask<F> {
    /// `1 x N_h`, entries exactly 0 or 1.
    pub mask: Array2<F>,
    /// Mean of `sigmoid(|w|)`; always in `[0.5, 1)`.
    pub threshold: F,
}

/// Binary per-class mask from the classifier weight.
#[derive(Clone, Debug)]
pub struct ClassMask<F> {
    /// `N_c x N_h`, entries exactly 0 or 1.
    pub mask: Array2<F>,
    /// Threshold applied to row `i` (all equal under [`ThresholdMode::Global`]).
    pub thresholds: Vec<F>,
    pub mode: ThresholdMode,
}

/// Mean of `sigmoid(|w|)` over every entry of `w`.
pub fn weight_threshold<F: Scalar>(w: &Array2<F>) -> Result<F> {
    if w.is_empty() {
        return Err(Error::Validation(
            "weight_threshold of an empty matrix".to_string(),
        ));
    }
    let total: F = w.iter().map(|&v| sigmoid(v.abs())).sum();
    Ok(total / F::from_usize(w.len()).unwrap())
}

/// Indicator of `sigmoid(|w|)` strictly above the matrix-wide threshold.
pub fn weight_mask<F: Scalar>(w: &Array2<F>) -> Result<Array2<F>> {
    let t = weight_threshold(w)?;
    Ok(w.mapv(|v| {
        if sigmoid(v.abs()) > t {
            F::one()
        } else {
            F::zero()
        }
    }))
}

/// Domain mask from the `1 x N_h` discriminator weight.
pub fn domain_mask<F: Scalar>(w_d: &Array2<F>) -> Result<DomainMask<F>> {
    if w_d.nrows() != 1 {
        return Err(Error::Validation(format!(
            "domain mask expects a single-row weight, got {}x{}",
            w_d.nrows(),
            w_d.ncols()
        )));
    }
    Ok(DomainMask {
        mask: weight_mask(w_d)?,
        threshold: weight_threshold(w_d)?,
    })
}

/// Class mask from the `N_c x N_h` classifier weight.
pub fn class_mask<F: Scalar>(w_c: &Array2<F>, mode: ThresholdMode) -> Result<ClassMask<F>> {
    match mode {
        ThresholdMode::Global => {
            let t = weight_threshold(w_c)?;
            Ok(ClassMask {
                mask: weight_mask(w_c)?,
                thresholds: vec![t; w_c.nrows()],
                mode,
            })
        }
        ThresholdMode::PerRow => {
            let mut mask = Array2::zeros(w_c.dim());
            let mut thresholds = Vec::with_capacity(w_c.nrows());
            for (i, row) in w_c.rows().into_iter().enumerate() {
                let row2 = row.insert_axis(Axis(0)).to_owned();
                let t = weight_threshold(&row2)?;
                thresholds.push(t);
                for j in 0..row2.ncols() {
                    if sigmoid(row2[(0, j)].abs()) > t {
                        mask[(i, j)] = F::one();
                    }
                }
            }
            Ok(ClassMask {
                mask,
                thresholds,
                mode,
            })
        }
    }
}

/// Per-sample combination of class-mask rows: row `k` of the result is
/// `sum_i weights[k][i] * M_c[i]`.
///
/// Source weights must be one-hot; target weights must lie on the simplex.
/// The result is data, not a differentiable node.
pub fn batch_class_mask<F: Scalar>(
    m_c: &Array2<F>,
    weights: &Array2<F>,
    origin: MaskOrigin,
) -> Result<Array2<F>> {
    let (b, n_c) = (weights.nrows(), weights.ncols());
    if n_c != m_c.nrows() {
        return Err(Error::shape("batch_class_mask", (b, n_c), m_c.dim()));
    }
    for (k, row) in weights.rows().into_iter().enumerate() {
        match origin {
            MaskOrigin::Source => {
                let mut ones = 0usize;
                for &v in row.iter() {
                    if v == F::one() {
                        ones += 1;
                    } else if v != F::zero() {
                        return Err(Error::Validation(format!(
                            "source row {k} is not one-hot: entry {v}"
                        )));
                    }
                }
                if ones != 1 {
                    return Err(Error::Validation(format!(
                        "source row {k} is not one-hot: {ones} ones"
                    )));
                }
            }
            MaskOrigin::Target => {
                if let Some(neg) = row.iter().find(|&&v| v < F::zero()) {
                    return Err(Error::Validation(format!(
                        "target row {k} has negative weight {neg}"
                    )));
                }
                let sum: F = row.iter().copied().sum();
                if (sum - F::one()).abs() > F::lit(1e-6) {
                    return Err(Error::Validation(format!(
                        "target row {k} sums to {sum}, not 1"
                    )));
                }
            }
        }
    }
    Ok(weights.dot(m_c))
}

/// Row-wise concatenation of the source and target batch masks, source first.
pub fn concat_batch_masks<F: Scalar>(
    src: &Array2<F>,
    tgt: &Array2<F>,
) -> Result<Array2<F>> {
    if src.ncols() != tgt.ncols() {
        return Err(Error::shape("concat_batch_masks", src.dim(), tgt.dim()));
    }
    Ok(concatenate(Axis(0), &[src.view(), tgt.view()]).expect("checked column counts"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn threshold_of_zeros_is_half() {
        let w: Array2<f64> = Array2::zeros((1, 4));
        assert_eq!(weight_threshold(&w).unwrap(), 0.5);
    }

    #[test]
    fn threshold_of_unit_entries() {
        // (2*sigmoid(1) + sigmoid(0)) / 3
        let w = array![[1.0, -1.0, 0.0]];
        let expect = (2.0 * 0.7310585786300049 + 0.5) / 3.0;
        assert_abs_diff_eq!(weight_threshold(&w).unwrap(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(
            weight_threshold(&w).unwrap(),
            0.6540390524200032,
            epsilon = 1e-12
        );
    }

    #[test]
    fn threshold_of_single_entry_is_its_score() {
        let w = array![[-2.5]];
        assert_eq!(
            weight_threshold(&w).unwrap(),
            crate::scalar::sigmoid(2.5_f64)
        );
    }

    #[test]
    fn threshold_rejects_empty() {
        let w: Array2<f64> = Array2::zeros((0, 3));
        assert!(weight_threshold(&w).is_err());
    }

    #[test]
    fn mask_of_mixed_magnitudes() {
        let w = array![[1.0, -1.0, 0.0]];
        assert_eq!(weight_mask(&w).unwrap(), array![[1.0, 1.0, 0.0]]);
    }

    #[test]
    fn constant_weights_give_all_zero_mask() {
        let w = Array2::from_elem((2, 5), 0.7);
        assert!(weight_mask(&w).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lone_large_entry_is_selected_alone() {
        let mut w = Array2::from_elem((1, 8), 0.01);
        w[(0, 5)] = 3.0;
        let m = weight_mask(&w).unwrap();
        for j in 0..8 {
            assert_eq!(m[(0, j)], if j == 5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn domain_mask_requires_single_row() {
        let w: Array2<f64> = Array2::zeros((2, 4));
        assert!(domain_mask(&w).is_err());
        let ok = domain_mask(&array![[0.5, -2.0, 0.1]]).unwrap();
        assert_eq!(ok.mask.dim(), (1, 3));
        assert!(ok.threshold >= 0.5 && ok.threshold < 1.0);
    }

    #[test]
    fn per_row_mode_thresholds_each_class_separately() {
        // row 0 has large weights, row 1 tiny ones; under a global threshold
        // row 1 would be all zeros, per-row it keeps its own winners
        let w = array![[5.0, 0.1, 4.0], [0.05, 0.001, 0.04]];
        let global = class_mask(&w, ThresholdMode::Global).unwrap();
        assert!(global.mask.row(1).iter().all(|&v| v == 0.0));
        let per_row = class_mask(&w, ThresholdMode::PerRow).unwrap();
        assert_eq!(per_row.mask.row(1).iter().filter(|&&v| v == 1.0).count(), 2);
        assert_ne!(per_row.thresholds[0], per_row.thresholds[1]);
    }

    #[test]
    fn one_hot_selects_mask_row() {
        let m_c = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let y = array![[0.0, 1.0], [1.0, 0.0]];
        let out = batch_class_mask(&m_c, &y, MaskOrigin::Source).unwrap();
        assert_eq!(out, array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);
    }

    #[test]
    fn uniform_scores_give_column_means() {
        let m_c = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let p = array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        let out = batch_class_mask(&m_c, &p, MaskOrigin::Target).unwrap();
        assert_abs_diff_eq!(out[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 1)], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn two_class_blend() {
        let m_c = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.7, 0.3]];
        let out = batch_class_mask(&m_c, &p, MaskOrigin::Target).unwrap();
        assert_abs_diff_eq!(out[(0, 0)], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(out[(0, 1)], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn source_rows_must_be_one_hot() {
        let m_c = array![[1.0, 0.0], [0.0, 1.0]];
        let soft = array![[0.7, 0.3]];
        assert!(batch_class_mask(&m_c, &soft, MaskOrigin::Source).is_err());
        let two_hot = array![[1.0, 1.0]];
        assert!(batch_class_mask(&m_c, &two_hot, MaskOrigin::Source).is_err());
    }

    #[test]
    fn target_rows_must_be_simplex() {
        let m_c = array![[1.0, 0.0], [0.0, 1.0]];
        let negative = array![[1.2, -0.2]];
        assert!(batch_class_mask(&m_c, &negative, MaskOrigin::Target).is_err());
        let off_sum = array![[0.6, 0.3]];
        assert!(batch_class_mask(&m_c, &off_sum, MaskOrigin::Target).is_err());
    }

    #[test]
    fn concat_keeps_source_rows_first() {
        let src = array![[1.0, 0.0], [0.0, 1.0]];
        let tgt = array![[0.5, 0.5]];
        let out = concat_batch_masks(&src, &tgt).unwrap();
        assert_eq!(out, array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
    }

    #[test]
    fn concat_empty_target_is_source() {
        let src = array![[1.0, 0.0]];
        let tgt: Array2<f64> = Array2::zeros((0, 2));
        assert_eq!(concat_batch_masks(&src, &tgt).unwrap(), src);
    }

    #[test]
    fn concat_rejects_width_mismatch() {
        let src: Array2<f64> = Array2::zeros((1, 2));
        let tgt: Array2<f64> = Array2::zeros((1, 3));
        assert!(concat_batch_masks(&src, &tgt).is_err());
    }

    proptest! {
        #[test]
        fn masks_are_binary_with_valid_thresholds(
            rows in 1usize..5,
            cols in 1usize..9,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-3.0..3.0_f64));
            let t = weight_threshold(&w).unwrap();
            prop_assert!((0.5..1.0).contains(&t));
            let m = weight_mask(&w).unwrap();
            prop_assert!(m.iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn max_magnitude_entry_is_always_masked(
            cols in 2usize..10,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut w = Array2::from_shape_fn((1, cols), |_| rng.gen_range(-2.0..2.0_f64));
            // force non-constancy so the strict threshold has room
            w[(0, 0)] = 2.5;
            w[(0, 1)] = 0.0;
            let m = weight_mask(&w).unwrap();
            let (arg, _) = w
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap();
            prop_assert_eq!(m[(0, arg)], 1.0);
        }

        #[test]
        fn one_hot_batch_mask_is_a_row_gather(
            n_c in 1usize..9,
            n_h in 1usize..17,
            seed in 0u64..200,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m_c = Array2::from_shape_fn((n_c, n_h), |_| {
                if rng.gen_bool(0.5) { 1.0 } else { 0.0 }
            });
            for k in 0..n_c {
                let mut y = Array2::zeros((1, n_c));
                y[(0, k)] = 1.0;
                let out = batch_class_mask(&m_c, &y, MaskOrigin::Source).unwrap();
                prop_assert_eq!(out.row(0).to_owned(), m_c.row(k).to_owned());
            }
        }
    }
}
