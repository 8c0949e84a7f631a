//! Source/target dataset construction: synthetic two-domain generators with
//! controllable covariate shift, CSV ingestion, and paired mini-batch
//! iteration.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which side of the adaptation problem a dataset belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DomainKind {
    Source,
    Target,
}

/// A labeled (source) or optionally labeled (target) feature table.
///
/// Target labels, when present, are used for evaluation only; the training
/// path never sees them.
#[derive(Clone, Debug)]
pub struct Dataset<F> {
    features: Array2<F>,
    labels: Option<Vec<usize>>,
    domain: DomainKind,
    seed: u64,
}

impl<F: Scalar> Dataset<F> {
    /// Validated constructor. Source datasets must carry labels; features
    /// must be finite; label count must match the row count.
    pub fn new(
        features: Array2<F>,
        labels: Option<Vec<usize>>,
        domain: DomainKind,
        seed: u64,
    ) -> Result<Self> {
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "dataset features must be finite, found {bad}"
            )));
        }
        match &labels {
            Some(l) if l.len() != features.nrows() => {
                return Err(Error::Validation(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.nrows()
                )));
            }
            None if domain == DomainKind::Source => {
                return Err(Error::Validation(
                    "source datasets must carry labels".to_string(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            features,
            labels,
            domain,
            seed,
        })
    }

    pub fn features(&self) -> &Array2<F> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> DomainKind {
        self.domain
    }

    /// Generator seed for synthetic data; 0 for loaded files.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Smallest class count covering every label present.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|&m| m + 1))
    }
}

fn moon_point(class: usize, t: f64) -> [f64; 2] {
    if class == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 0.5 - t.sin()]
    }
}

fn rotate_deg(p: [f64; 2], deg: f64) -> [f64; 2] {
    let r = deg.to_radians();
    let (s, c) = (r.sin(), r.cos());
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

/// Two interleaving half circles, with the target domain rotated about the
/// origin and translated before noise is applied.
///
/// Both domains are re-sampled independently; everything is determined by
/// `seed`. Class counts are balanced to within one sample.
pub fn make_two_moons_shift<F: Scalar>(
    n_per_domain: usize,
    noise_sigma: f64,
    rotation_deg: f64,
    translation: [f64; 2],
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if n_per_domain < 4 {
        return Err(Error::Validation(format!(
            "two moons needs at least 4 samples per domain, got {n_per_domain}"
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Validation(format!(
            "noise_sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let mut sample_domain = |rotation: f64, shift: [f64; 2]| {
        let mut feats = Array2::zeros((n_per_domain, 2));
        let mut labels = Vec::with_capacity(n_per_domain);
        let n_second = n_per_domain / 2;
        for i in 0..n_per_domain {
            let class = usize::from(i >= n_per_domain - n_second);
            let t = rng.gen_range(0.0..std::f64::consts::PI);
            let clean = rotate_deg(moon_point(class, t), rotation);
            let x = clean[0] + shift[0] + noise.sample(&mut rng);
            let y = clean[1] + shift[1] + noise.sample(&mut rng);
            feats[(i, 0)] = F::lit(x);
            feats[(i, 1)] = F::lit(y);
            labels.push(class);
        }
        (feats, labels)
    };
    let (fs, ls) = sample_domain(0.0, [0.0, 0.0]);
    let (ft, lt) = sample_domain(rotation_deg, translation);
    Ok((
        Dataset::new(fs, Some(ls), DomainKind::Source, seed)?,
        Dataset::new(ft, Some(lt), DomainKind::Target, seed)?,
    ))
}

/// Gaussian class blobs over `n_classes` informative dimensions plus
/// class-uninformative nuisance dimensions whose mean shifts between the
/// domains.
///
/// Class `i` has mean `class_sep * e_i` over the informative block in both
/// domains; nuisance coordinates are standard normal in the source and
/// mean-shifted in the target. `mean_shift` must have one entry per
/// nuisance dimension, or a single entry to broadcast.
pub fn make_blob_shift<F: Scalar>(
    n_per_domain: usize,
    n_classes: usize,
    class_sep: f64,
    mean_shift: &[f64],
    nuisance_dims: usize,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if n_classes < 2 {
        return Err(Error::Validation(format!(
            "blobs need at least 2 classes, got {n_classes}"
        )));
    }
    if n_per_domain == 0 || n_per_domain % n_classes != 0 {
        return Err(Error::Validation(format!(
            "n_per_domain {n_per_domain} must be a positive multiple of {n_classes}"
        )));
    }
    if !class_sep.is_finite() || class_sep < 0.0 {
        return Err(Error::Validation(format!(
            "class_sep must be finite and non-negative, got {class_sep}"
        )));
    }
    let shifts: Vec<f64> = match (mean_shift.len(), nuisance_dims) {
        (n, d) if n == d => mean_shift.to_vec(),
        (1, d) if d >= 1 => vec![mean_shift[0]; d],
        (0, 0) => Vec::new(),
        (n, d) => {
            return Err(Error::Validation(format!(
                "mean_shift has {n} entries for {d} nuisance dims"
            )));
        }
    };
    if let Some(bad) = shifts.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "mean_shift entries must be finite, got {bad}"
        )));
    }

    let d = n_classes + nuisance_dims;
    let per_class = n_per_domain / n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sample_domain = |shifted: bool| {
        let mut feats = Array2::zeros((n_per_domain, d));
        let mut labels = Vec::with_capacity(n_per_domain);
        for class in 0..n_classes {
            for k in 0..per_class {
                let row = class * per_class + k;
                for j in 0..n_classes {
                    let mean = if j == class { class_sep } else { 0.0 };
                    feats[(row, j)] = F::lit(mean + unit.sample(&mut rng));
                }
                for j in 0..nuisance_dims {
                    let mean = if shifted { shifts[j] } else { 0.0 };
                    feats[(row, n_classes + j)] = F::lit(mean + unit.sample(&mut rng));
                }
                labels.push(class);
            }
        }
        (feats, labels)
    };
    let (fs, ls) = sample_domain(false);
    let (ft, lt) = sample_domain(true);
    Ok((
        Dataset::new(fs, Some(ls), DomainKind::Source, seed)?,
        Dataset::new(ft, Some(lt), DomainKind::Target, seed)?,
    ))
}

/// Write a dataset as CSV with header `f0,...,fk[,label]`, LF endings.
///
/// Feature values are printed in shortest round-trip form, so save→load
/// is value-exact.
pub fn save_csv<F: Scalar>(path: impl AsRef<Path>, dataset: &Dataset<F>) -> Result<()> {
    let mut out = String::new();
    let d = dataset.dim();
    for j in 0..d {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("f{j}"));
    }
    if dataset.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in dataset.features.rows().into_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", v.to_f64_lossy()));
        }
        if let Some(labels) = &dataset.labels {
            out.push_str(&format!(",{}", labels[i]));
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

/// Load a dataset written in the [`save_csv`] schema.
///
/// The header must name feature columns `f0..fk` in order, optionally
/// followed by `label`. A source file without a label column is an error;
/// non-finite feature values are rejected. Errors carry 1-based line
/// numbers.
pub fn load_csv<F: Scalar>(path: impl AsRef<Path>, domain: DomainKind) -> Result<Dataset<F>> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path_str.clone(), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path_str.clone(),
        line,
        message,
    };

    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let has_label = cols.last() == Some(&"label");
    let n_features = cols.len() - usize::from(has_label);
    if n_features == 0 {
        return Err(parse_err(1, "no feature columns".to_string()));
    }
    for (j, name) in cols.iter().take(n_features).enumerate() {
        if *name != format!("f{j}") {
            return Err(parse_err(
                1,
                format!("expected column f{j}, found {name:?}"),
            ));
        }
    }
    if domain == DomainKind::Source && !has_label {
        return Err(parse_err(
            1,
            "source file must have a label column".to_string(),
        ));
    }

    let mut values: Vec<F> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut rows = 0usize;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", cols.len(), cells.len()),
            ));
        }
        for cell in cells.iter().take(n_features) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid number {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value {cell:?}")));
            }
            values.push(F::lit(v));
        }
        if has_label {
            let l: usize = cells[n_features]
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid label {:?}", cells[n_features])))?;
            labels.push(l);
        }
        rows += 1;
    }
    let features = Array2::from_shape_vec((rows, n_features), values)
        .expect("counted while parsing");
    Dataset::new(features, has_label.then_some(labels), domain, 0)
}

/// Standardize both domains with per-column mean/std computed on the
/// source only. Using each domain's own statistics would erase the very
/// shift being studied.
///
/// Constant source columns (std 0) are centered but not scaled.
pub fn standardize_by_source<F: Scalar>(
    source: &mut Dataset<F>,
    target: &mut Dataset<F>,
) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(Error::shape(
            "standardize_by_source",
            source.features.dim(),
            target.features.dim(),
        ));
    }
    if source.is_empty() {
        return Err(Error::Validation("empty source dataset".to_string()));
    }
    let n = F::from_usize(source.len()).unwrap();
    let d = source.dim();
    for j in 0..d {
        let col = source.features.column(j);
        let mean = col.iter().copied().sum::<F>() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let std = var.sqrt();
        let scale = if std > F::lit(1e-12) { std } else { F::one() };
        for v in source.features.column_mut(j) {
            *v = (*v - mean) / scale;
        }
        for v in target.features.column_mut(j) {
            *v = (*v - mean) / scale;
        }
    }
    Ok(())
}

/// One balanced training step worth of data: equal-size source and target
/// halves, with one-hot source labels. Target labels never appear here.
#[derive(Clone, Debug)]
pub struct PairedBatch<F> {
    pub x_s: Array2<F>,
    pub y_s: Array2<F>,
    pub x_t: Array2<F>,
    pub epoch: usize,
    pub step: usize,
}

fn derived_seed(seed: u64, epoch: u64, tag: u64) -> u64 {
    // SplitMix64 finalizer over the mixed words
    let mut z = seed
        ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index stream for one domain and epoch: repeated fresh shuffles of
/// `0..n`, truncated to `needed` entries, so every sample is visited before
/// any is repeated more than its neighbors.
fn index_stream(n: usize, needed: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = Vec::with_capacity(needed + n);
    while stream.len() < needed {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        stream.extend(perm);
    }
    stream.truncate(needed);
    stream
}

fn gather_rows<F: Scalar>(feats: &Array2<F>, idx: &[usize]) -> Array2<F> {
    Array2::from_shape_fn((idx.len(), feats.ncols()), |(r, c)| feats[(idx[r], c)])
}

/// One epoch of balanced paired batches.
///
/// The number of steps is `ceil(max(n_s, n_t) / batch_per_domain)`; the
/// shorter domain cycles through fresh reshuffles so every sample on both
/// sides is visited at least once. Fully determined by `(seed, epoch)`.
pub fn paired_batches<F: Scalar>(
    source: &Dataset<F>,
    target: &Dataset<F>,
    batch_per_domain: usize,
    n_classes: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<PairedBatch<F>>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Validation("empty dataset in paired_batches".to_string()));
    }
    if batch_per_domain == 0 {
        return Err(Error::Validation("batch_per_domain must be positive".to_string()));
    }
    if batch_per_domain > source.len() || batch_per_domain > target.len() {
        return Err(Error::Validation(format!(
            "batch_per_domain {batch_per_domain} exceeds a dataset ({} source, {} target rows)",
            source.len(),
            target.len()
        )));
    }
    let labels = source
        .labels()
        .ok_or_else(|| Error::Validation("source dataset has no labels".to_string()))?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }

    let b = batch_per_domain;
    let steps = source.len().max(target.len()).div_ceil(b);
    let needed = steps * b;
    let s_idx = index_stream(source.len(), needed, derived_seed(seed, epoch as u64, 1));
    let t_idx = index_stream(target.len(), needed, derived_seed(seed, epoch as u64, 2));

    let mut batches = Vec::with_capacity(steps);
    for step in 0..steps {
        let s_slice = &s_idx[step * b..(step + 1) * b];
        let t_slice = &t_idx[step * b..(step + 1) * b];
        let x_s = gather_rows(source.features(), s_slice);
        let x_t = gather_rows(target.features(), t_slice);
        let mut y_s = Array2::zeros((b, n_classes));
        for (r, &i) in s_slice.iter().enumerate() {
            y_s[(r, labels[i])] = F::one();
        }
        batches.push(PairedBatch {
            x_s,
            y_s,
            x_t,
            epoch,
            step,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type DS = Dataset<f64>;

    fn moons(n: usize, rot: f64, seed: u64) -> (DS, DS) {
        make_two_moons_shift(n, 0.1, rot, [0.0, 0.0], seed).unwrap()
    }

    /// Least-squares linear probe (binary): fit `[x, 1] . w = ±1` by the
    /// normal equations, classify by sign. Independent of all model code.
    fn linear_probe_accuracy(train: &DS, test: &DS) -> f64 {
        let labels = train.labels().unwrap();
        let d = train.dim() + 1;
        // accumulate A^T A and A^T y over augmented rows [x, 1]
        let mut ata = vec![vec![0.0_f64; d]; d];
        let mut aty = vec![0.0_f64; d];
        for (i, row) in train.features().rows().into_iter().enumerate() {
            let mut a = row.to_vec();
            a.push(1.0);
            let y = if labels[i] == 1 { 1.0 } else { -1.0 };
            for p in 0..d {
                for q in 0..d {
                    ata[p][q] += a[p] * a[q];
                }
                aty[p] += a[p] * y;
            }
        }
        // Gaussian elimination with partial pivoting
        let mut m: Vec<Vec<f64>> = (0..d)
            .map(|p| {
                let mut r = ata[p].clone();
                r.push(aty[p]);
                r
            })
            .collect();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            for r in col + 1..d {
                let factor = m[r][col] / m[col][col];
                for c in col..=d {
                    m[r][c] -= factor * m[col][c];
                }
            }
        }
        let mut w = vec![0.0_f64; d];
        for r in (0..d).rev() {
            let mut acc = m[r][d];
            for c in r + 1..d {
                acc -= m[r][c] * w[c];
            }
            w[r] = acc / m[r][r];
        }

        let test_labels = test.labels().unwrap();
        let mut hits = 0usize;
        for (i, row) in test.features().rows().into_iter().enumerate() {
            let score: f64 =
                row.iter().zip(&w).map(|(&x, &wv)| x * wv).sum::<f64>() + w[d - 1];
            let pred = usize::from(score > 0.0);
            hits += usize::from(pred == test_labels[i]);
        }
        100.0 * hits as f64 / test.len() as f64
    }

    #[test]
    fn moons_are_deterministic_and_balanced() {
        let (s1, t1) = moons(101, 30.0, 7);
        let (s2, t2) = moons(101, 30.0, 7);
        assert_eq!(s1.features(), s2.features());
        assert_eq!(t1.features(), t2.features());
        let ones = s1.labels().unwrap().iter().filter(|&&l| l == 1).count();
        let zeros = s1.len() - ones;
        assert!(zeros.abs_diff(ones) <= 1);
    }

    #[test]
    fn moons_different_seeds_differ() {
        let (s1, _) = moons(50, 0.0, 1);
        let (s2, _) = moons(50, 0.0, 2);
        assert_ne!(s1.features(), s2.features());
    }

    #[test]
    fn rotation_180_negates_clean_points() {
        for t in [0.1, 1.0, 2.5] {
            let p = moon_point(0, t);
            let r = rotate_deg(p, 180.0);
            assert_abs_diff_eq!(r[0], -p[0], epsilon = 1e-12);
            assert_abs_diff_eq!(r[1], -p[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn rotated_noiseless_moons_live_on_the_rotated_manifold() {
        let (_, t) = make_two_moons_shift::<f64>(200, 0.0, 180.0, [0.0, 0.0], 3).unwrap();
        let labels = t.labels().unwrap();
        for (i, row) in t.features().rows().into_iter().enumerate() {
            if labels[i] == 0 {
                // class 0 is the unit upper half circle; rotated 180 it has
                // unit norm and non-positive y
                let norm = (row[0] * row[0] + row[1] * row[1]).sqrt();
                assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
                assert!(row[1] <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_shift_moons_match_in_distribution() {
        let (s, t) = make_two_moons_shift::<f64>(2000, 0.1, 0.0, [0.0, 0.0], 11).unwrap();
        for j in 0..2 {
            let ms: f64 = s.features().column(j).sum() / s.len() as f64;
            let mt: f64 = t.features().column(j).sum() / t.len() as f64;
            assert!((ms - mt).abs() < 0.05, "column {j}: {ms} vs {mt}");
        }
    }

    #[test]
    fn shifted_moons_degrade_a_source_probe() {
        let mut src_acc = 0.0;
        let mut tgt_acc = 0.0;
        for seed in 0..10 {
            let (s, t) = moons(500, 30.0, seed);
            src_acc += linear_probe_accuracy(&s, &s);
            tgt_acc += linear_probe_accuracy(&s, &t);
        }
        assert!(
            (src_acc - tgt_acc) / 10.0 > 10.0,
            "probe gap too small: {} vs {}",
            src_acc / 10.0,
            tgt_acc / 10.0
        );
    }

    #[test]
    fn unshifted_moons_leave_the_probe_unharmed() {
        let mut src_acc = 0.0;
        let mut tgt_acc = 0.0;
        for seed in 0..10 {
            let (s, t) = moons(500, 0.0, seed);
            src_acc += linear_probe_accuracy(&s, &s);
            tgt_acc += linear_probe_accuracy(&s, &t);
        }
        let gap = (src_acc - tgt_acc) / 10.0;
        assert!(gap.abs() < 3.0, "unexpected gap {gap} with no shift");
    }

    #[test]
    fn blob_classes_are_exactly_balanced() {
        let (s, t) = make_blob_shift::<f64>(120, 3, 4.0, &[2.0], 2, 5).unwrap();
        for ds in [&s, &t] {
            let labels = ds.labels().unwrap();
            for c in 0..3 {
                assert_eq!(labels.iter().filter(|&&l| l == c).count(), 40);
            }
        }
        assert_eq!(s.dim(), 5);
    }

    #[test]
    fn blob_shift_moves_only_nuisance_columns() {
        let (s, t) = make_blob_shift::<f64>(400, 2, 3.0, &[3.0, 3.0, 3.0, 3.0], 4, 9).unwrap();
        let col_mean = |ds: &DS, j: usize| ds.features().column(j).sum() / ds.len() as f64;
        for j in 0..2 {
            assert!((col_mean(&t, j) - col_mean(&s, j)).abs() < 0.3);
        }
        for j in 2..6 {
            let gap = col_mean(&t, j) - col_mean(&s, j);
            assert!((gap - 3.0).abs() < 0.3, "nuisance column {j} gap {gap}");
        }
    }

    #[test]
    fn nuisance_shift_is_visible_to_a_domain_probe_but_not_informative_dims() {
        let (s, t) = make_blob_shift::<f64>(400, 2, 3.0, &[3.0], 4, 13).unwrap();
        // nearest-domain-mean probe: distance to each domain's mean vector
        let domain_probe = |cols: std::ops::Range<usize>| -> f64 {
            let d = cols.len();
            let mean = |ds: &DS| -> Vec<f64> {
                cols.clone()
                    .map(|j| ds.features().column(j).sum() / ds.len() as f64)
                    .collect()
            };
            let (ms, mt) = (mean(&s), mean(&t));
            let mut hits = 0usize;
            let mut total = 0usize;
            for (ds, own_is_source) in [(&s, true), (&t, false)] {
                for row in ds.features().rows() {
                    let dist = |m: &[f64]| -> f64 {
                        (0..d)
                            .map(|k| (row[cols.start + k] - m[k]).powi(2))
                            .sum()
                    };
                    let says_source = dist(&ms) <= dist(&mt);
                    hits += usize::from(says_source == own_is_source);
                    total += 1;
                }
            }
            100.0 * hits as f64 / total as f64
        };
        let raw = domain_probe(0..6);
        let informative_only = domain_probe(0..2);
        assert!(raw > 90.0, "raw-feature domain probe only {raw}%");
        assert!(
            (40.0..60.0).contains(&informative_only),
            "informative-only probe should be near chance, got {informative_only}%"
        );
    }

    #[test]
    fn blob_validation() {
        assert!(make_blob_shift::<f64>(100, 1, 1.0, &[], 0, 0).is_err());
        assert!(make_blob_shift::<f64>(101, 2, 1.0, &[], 0, 0).is_err());
        assert!(make_blob_shift::<f64>(100, 2, 1.0, &[1.0, 2.0], 3, 0).is_err());
        assert!(make_blob_shift::<f64>(100, 2, -1.0, &[], 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let (s, _) = moons(25, 15.0, 21);
        save_csv(&path, &s).unwrap();
        let loaded: DS = load_csv(&path, DomainKind::Source).unwrap();
        assert_eq!(loaded.len(), 25);
        for (a, b) in s.features().iter().zip(loaded.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(s.labels(), loaded.labels());
    }

    #[test]
    fn csv_without_labels_round_trips_for_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unlabeled.csv");
        let ds = DS::new(
            ndarray::array![[1.5, -2.5], [0.0, 3.25]],
            None,
            DomainKind::Target,
            0,
        )
        .unwrap();
        save_csv(&path, &ds).unwrap();
        let loaded: DS = load_csv(&path, DomainKind::Target).unwrap();
        assert_eq!(loaded.features(), ds.features());
        assert!(loaded.labels().is_none());
        // the same file is rejected as a source
        assert!(load_csv::<f64>(&path, DomainKind::Source).is_err());
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,0\n1.0,oops,1\n").unwrap();
        let err = load_csv::<f64>(&path, DomainKind::Source)
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.csv:3"), "{err}");
        assert!(err.contains("oops"), "{err}");

        std::fs::write(&path, "f0,f1\n1.0,NaN\n").unwrap();
        assert!(load_csv::<f64>(&path, DomainKind::Target).is_err());

        std::fs::write(&path, "f0,weird\n1.0,2.0\n").unwrap();
        let err = load_csv::<f64>(&path, DomainKind::Target)
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.csv:1"), "{err}");
    }

    #[test]
    fn standardize_centers_source_and_preserves_shift() {
        let (mut s, mut t) =
            make_blob_shift::<f64>(400, 2, 3.0, &[3.0], 2, 17).unwrap();
        standardize_by_source(&mut s, &mut t).unwrap();
        for j in 0..4 {
            let mean: f64 = s.features().column(j).sum() / s.len() as f64;
            let var: f64 = s
                .features()
                .column(j)
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<f64>()
                / s.len() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-10);
        }
        // the nuisance shift survives in the target (3 sigma over unit std)
        for j in 2..4 {
            let mean_t: f64 = t.features().column(j).sum() / t.len() as f64;
            assert!(mean_t > 2.0, "column {j} target mean {mean_t}");
        }
    }

    #[test]
    fn single_batch_covers_everything() {
        let (s, t) = moons(8, 0.0, 2);
        let batches = paired_batches(&s, &t, 8, 2, 0, 0).unwrap();
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.x_s.dim(), (8, 2));
        assert_eq!(b.x_t.dim(), (8, 2));
        assert_eq!(b.y_s.dim(), (8, 2));
        // every source row appears exactly once (compare sorted first columns)
        let mut got: Vec<f64> = b.x_s.column(0).to_vec();
        let mut want: Vec<f64> = s.features().column(0).to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn batches_are_deterministic_per_seed_and_epoch() {
        let (s, t) = moons(40, 10.0, 4);
        let a = paired_batches(&s, &t, 10, 2, 5, 3).unwrap();
        let b = paired_batches(&s, &t, 10, 2, 5, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.x_s, y.x_s);
            assert_eq!(x.x_t, y.x_t);
            assert_eq!(x.y_s, y.y_s);
        }
        let c = paired_batches(&s, &t, 10, 2, 5, 4).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.x_s != y.x_s));
    }

    #[test]
    fn cycling_rule_on_uneven_domains() {
        let s = DS::new(
            Array2::from_shape_fn((10, 1), |(i, _)| i as f64),
            Some(vec![0; 10]),
            DomainKind::Source,
            0,
        )
        .unwrap();
        let t = DS::new(
            Array2::from_shape_fn((7, 1), |(i, _)| 100.0 + i as f64),
            Some(vec![0; 7]),
            DomainKind::Target,
            0,
        )
        .unwrap();
        let batches = paired_batches(&s, &t, 5, 1, 9, 0).unwrap();
        assert_eq!(batches.len(), 2);
        // the 10 target slots cover all 7 samples, with 3 repeats
        let mut counts = vec![0usize; 7];
        for b in &batches {
            for &v in b.x_t.column(0).iter() {
                counts[(v - 100.0) as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c >= 1));
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert_eq!(counts.iter().filter(|&&c| c == 2).count(), 3);
    }

    #[test]
    fn one_hot_labels_match_rows() {
        let (s, t) = moons(20, 0.0, 6);
        let batches = paired_batches(&s, &t, 5, 2, 1, 0).unwrap();
        for b in &batches {
            for row in b.y_s.rows() {
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn batch_validation_errors() {
        let (s, t) = moons(10, 0.0, 1);
        assert!(paired_batches(&s, &t, 0, 2, 0, 0).is_err());
        assert!(paired_batches(&s, &t, 11, 2, 0, 0).is_err());
        // labels out of range for the claimed class count
        assert!(paired_batches(&s, &t, 5, 1, 0, 0).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(DS::new(
            ndarray::array![[f64::NAN]],
            Some(vec![0]),
            DomainKind::Source,
            0
        )
        .is_err());
        assert!(DS::new(ndarray::array![[1.0]], None, DomainKind::Source, 0).is_err());
        assert!(
            DS::new(ndarray::array![[1.0]], Some(vec![0, 1]), DomainKind::Source, 0).is_err()
        );
    }
}
