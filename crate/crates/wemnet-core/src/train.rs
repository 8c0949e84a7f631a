//! Training loop, evaluation metrics, the ablation runner, and the
//! domain-error probe, plus the file formats they emit.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GrlSchedule, RunConfig};
use crate::data::{paired_batches, standardize_by_source, Dataset, PairedBatch};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, GradReport, DEFAULT_STEP};
use crate::model::{GrlMode, ModelConfig, StepOutputs, WemnetModel};
use crate::nn::{save_parameters, SgdOptimizer};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Rows evaluated per forward pass when scoring a whole dataset.
const EVAL_CHUNK: usize = 512;

/// Per-epoch measurements. Losses are means over the epoch's steps; epoch 0
/// is an evaluation-only record of the freshly initialized model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_total: f64,
    pub source_accuracy: f64,
    /// Absent when the target split carries no labels (the deployment
    /// case); synthetic generators keep them for evaluation only.
    pub target_accuracy: Option<f64>,
    /// Mean domain error of discriminator scores on raw features `f`.
    pub mean_err_d_with_source: f64,
    pub mean_err_d_with_target: f64,
    /// Same on the domain-purged features `f̂_d` (equal to the `with`
    /// columns when DIM is disabled, since then `f̂_d = f`).
    pub mean_err_d_without_source: f64,
    pub mean_err_d_without_target: f64,
}

/// Result of one training run.
pub struct TrainOutput<F: Scalar> {
    pub model: WemnetModel<F>,
    pub history: Vec<MetricsRecord>,
    /// Largest per-step `|L_total - (L_cls + λ·L_adv)|` seen while training.
    pub max_composition_gap: f64,
}

/// Domain error of a discriminator score: distance from maximal confusion,
/// in points. 0 means the feature carries no domain signal the
/// discriminator can use; 50 means it is perfectly domain-identifiable.
pub fn domain_error(score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Validation(format!(
            "domain_error expects a probability in [0,1], got {score}"
        )));
    }
    Ok((score - 0.5).abs() * 100.0)
}

/// Warm-up reversal strength `2/(1+e^{-10p}) - 1` for progress `p ∈ [0,1]`.
pub fn ramp_lambda(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0
}

fn argmax_row<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Percent of dataset rows whose deployed-path class prediction matches the
/// label. Ties resolve to the lowest class index.
pub fn evaluate_accuracy<F: Scalar>(model: &WemnetModel<F>, dataset: &Dataset<F>) -> Result<f64> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Validation("evaluate_accuracy needs labels".to_string()))?;
    if dataset.is_empty() {
        return Err(Error::Validation(
            "evaluate_accuracy on empty dataset".to_string(),
        ));
    }
    let features = dataset.features();
    let mut correct = 0usize;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let chunk = features.slice(ndarray::s![start..end, ..]).to_owned();
        let tape = Tape::new();
        let logits = model.class_logits(&tape, &Tensor::constant(chunk))?;
        let values = logits.value_clone();
        for (i, row) in values.rows().into_iter().enumerate() {
            let pred = argmax_row(row.as_slice().expect("contiguous row"));
            if pred == labels[start + i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Mean discriminator domain error over a dataset, on raw features (`with`
/// domain content) and on the DIM output (`without`), both fed straight to
/// `G_d` so the two columns differ only in the representation under test.
fn mean_domain_errors<F: Scalar>(
    model: &WemnetModel<F>,
    dataset: &Dataset<F>,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Validation(
            "domain error on empty dataset".to_string(),
        ));
    }
    let features = dataset.features();
    let mut sum_with = 0.0;
    let mut sum_without = 0.0;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let chunk = features.slice(ndarray::s![start..end, ..]).to_owned();
        let tape = Tape::new();
        let f = model.features(&tape, &Tensor::constant(chunk))?;
        let purged = if model.dim_enabled() {
            model.dim_forward(&tape, &f)?
        } else {
            f.clone()
        };
        for (input, acc) in [(&f, &mut sum_with), (&purged, &mut sum_without)] {
            let logits = model.discriminator_forward(&tape, input)?;
            let scores = tape.sigmoid(&logits);
            for &s in scores.value().iter() {
                *acc += domain_error(s.to_f64_lossy())?;
            }
        }
        start = end;
    }
    let n = dataset.len() as f64;
    Ok((sum_with / n, sum_without / n))
}

/// Mean domain errors per domain, with and without the domain-related
/// representation removed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainErrorTable {
    pub with_source: f64,
    pub with_target: f64,
    pub without_source: f64,
    pub without_target: f64,
}

impl DomainErrorTable {
    /// True when removing the domain representation lowered the mean error
    /// in both domains — the direction adaptation is after.
    pub fn purge_helps_both_domains(&self) -> bool {
        self.without_source < self.with_source && self.without_target < self.with_target
    }
}

/// Score both domains through the trained discriminator on `f` and `f̂_d`.
/// Requires DIM: without it there is no "without" representation.
pub fn domain_error_probe<F: Scalar>(
    model: &WemnetModel<F>,
    source: &Dataset<F>,
    target: &Dataset<F>,
) -> Result<DomainErrorTable> {
    if !model.dim_enabled() {
        return Err(Error::Validation(
            "domain_error_probe requires a model with DIM enabled".to_string(),
        ));
    }
    let (with_source, without_source) = mean_domain_errors(model, source)?;
    let (with_target, without_target) = mean_domain_errors(model, target)?;
    Ok(DomainErrorTable {
        with_source,
        with_target,
        without_source,
        without_target,
    })
}

fn losses_to_f64<F: Scalar>(out: &StepOutputs<F>, loss_lambda: f64) -> (f64, f64, f64, f64) {
    let l_cls = out.l_cls.item().to_f64_lossy();
    let l_adv = out.l_adv.item().to_f64_lossy();
    let l_total = out.total.item().to_f64_lossy();
    let gap = (l_total - (l_cls + loss_lambda * l_adv)).abs();
    (l_cls, l_adv, l_total, gap)
}

fn evaluation_record<F: Scalar>(
    epoch: usize,
    losses: (f64, f64, f64),
    model: &WemnetModel<F>,
    source: &Dataset<F>,
    target: &Dataset<F>,
) -> Result<MetricsRecord> {
    let source_accuracy = evaluate_accuracy(model, source)?;
    let target_accuracy = match target.labels() {
        Some(_) => Some(evaluate_accuracy(model, target)?),
        None => None,
    };
    let (with_source, without_source) = mean_domain_errors(model, source)?;
    let (with_target, without_target) = mean_domain_errors(model, target)?;
    Ok(MetricsRecord {
        epoch,
        l_cls: losses.0,
        l_adv: losses.1,
        l_total: losses.2,
        source_accuracy,
        target_accuracy,
        mean_err_d_with_source: with_source,
        mean_err_d_with_target: with_target,
        mean_err_d_without_source: without_source,
        mean_err_d_without_target: without_target,
    })
}

/// Mean losses over an epoch's batches without touching any parameter.
fn eval_losses<F: Scalar>(
    model: &WemnetModel<F>,
    batches: &[PairedBatch<F>],
    loss_lambda: f64,
) -> Result<((f64, f64, f64), f64)> {
    let mut sums = (0.0, 0.0, 0.0);
    let mut max_gap = 0.0f64;
    for batch in batches {
        let tape = Tape::new();
        let out = model.total_loss(&tape, batch)?;
        let (c, a, t, gap) = losses_to_f64(&out, loss_lambda);
        sums.0 += c;
        sums.1 += a;
        sums.2 += t;
        max_gap = max_gap.max(gap);
    }
    let n = batches.len() as f64;
    Ok(((sums.0 / n, sums.1 / n, sums.2 / n), max_gap))
}

/// Train per the configuration: one paired batch per step, backward on the
/// total loss, one SGD update. Epoch 0 logs the untrained model; every
/// subsequent record aggregates one epoch. Fully deterministic per
/// (config, seed).
pub fn train<F: Scalar>(config: &RunConfig) -> Result<TrainOutput<F>> {
    config.validate()?;
    let (mut source, mut target) = config.dataset.build::<F>(config.seed)?;
    if config.standardize {
        standardize_by_source(&mut source, &mut target)?;
    }
    let model_config: ModelConfig = config.model_config(source.dim());
    let mut model = WemnetModel::new(model_config, config.seed)?;
    let mut optimizer = SgdOptimizer::new(
        model.trainable_parameters(),
        F::lit(config.optimizer.lr),
        F::lit(config.optimizer.momentum),
        F::lit(config.optimizer.weight_decay),
    );
    let n_classes = config.dataset.num_classes();
    let loss_lambda = config.loss_lambda;

    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut max_composition_gap = 0.0f64;

    // epoch 0: the untrained model, same batch layout as a real epoch
    let warmup = paired_batches(&source, &target, config.batch_per_domain, n_classes, config.seed, 0)?;
    let steps_per_epoch = warmup.len();
    let (losses0, gap0) = eval_losses(&model, &warmup, loss_lambda)?;
    max_composition_gap = max_composition_gap.max(gap0);
    history.push(evaluation_record(0, losses0, &model, &source, &target)?);

    let total_steps = (config.epochs * steps_per_epoch).max(1);
    let mut global_step = 0usize;
    for epoch in 1..=config.epochs {
        let batches = paired_batches(
            &source,
            &target,
            config.batch_per_domain,
            n_classes,
            config.seed,
            epoch,
        )?;
        let mut sums = (0.0, 0.0, 0.0);
        for batch in &batches {
            if config.grl_schedule == GrlSchedule::Ramp {
                let progress = global_step as f64 / total_steps as f64;
                model.set_grl_lambda(F::lit(ramp_lambda(progress)));
            }
            let tape = Tape::new();
            let out = model.total_loss(&tape, batch)?;
            tape.backward(&out.total)?;
            optimizer.step()?;
            let (c, a, t, gap) = losses_to_f64(&out, loss_lambda);
            sums.0 += c;
            sums.1 += a;
            sums.2 += t;
            max_composition_gap = max_composition_gap.max(gap);
            global_step += 1;
        }
        let n = batches.len() as f64;
        let losses = (sums.0 / n, sums.1 / n, sums.2 / n);
        history.push(evaluation_record(epoch, losses, &model, &source, &target)?);
    }

    Ok(TrainOutput {
        model,
        history,
        max_composition_gap,
    })
}

/// One epoch record per line, keys exactly as in [`MetricsRecord`].
pub fn metrics_jsonl(history: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for record in history {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Plot-ready CSV mirror of the JSONL metrics.
pub fn summary_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from(
        "epoch,l_cls,l_adv,l_total,source_accuracy,target_accuracy,\
         mean_err_d_with_source,mean_err_d_with_target,\
         mean_err_d_without_source,mean_err_d_without_target\n",
    );
    for r in history {
        let target = r
            .target_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.l_cls,
            r.l_adv,
            r.l_total,
            r.source_accuracy,
            target,
            r.mean_err_d_with_source,
            r.mean_err_d_with_target,
            r.mean_err_d_without_source,
            r.mean_err_d_without_target,
        ));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Train and write `metrics.jsonl`, `summary.csv`, `config.json`, and
/// `model.json` into `out_dir` (created if needed).
pub fn run_to_dir(config: &RunConfig, out_dir: &Path) -> Result<TrainOutput<f64>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let output = train::<f64>(config)?;
    write_text(&out_dir.join("metrics.jsonl"), &metrics_jsonl(&output.history)?)?;
    write_text(&out_dir.join("summary.csv"), &summary_csv(&output.history))?;
    config.save(&out_dir.join("config.json"))?;
    save_parameters(&out_dir.join("model.json"), &output.model.named_parameters())?;
    Ok(output)
}

/// One ablation variant's outcome.
pub struct AblationOutcome {
    pub name: String,
    pub dim_enabled: bool,
    pub sem_enabled: bool,
    pub history: Vec<MetricsRecord>,
}

impl AblationOutcome {
    pub fn final_record(&self) -> &MetricsRecord {
        self.history.last().expect("history never empty")
    }

    pub fn final_target_accuracy(&self) -> Option<f64> {
        self.final_record().target_accuracy
    }
}

/// The four flag combinations, in reporting order.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("dim", true, false),
    ("sem", false, true),
    ("full", true, true),
];

/// Train all four flag combinations on identical data and seed, each run in
/// its own thread with no shared state.
pub fn ablation_run(base: &RunConfig) -> Result<Vec<AblationOutcome>> {
    base.validate()?;
    let results: Vec<Result<AblationOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ABLATION_VARIANTS
            .map(|(name, dim, sem)| {
                scope.spawn(move || {
                    let mut config = base.clone();
                    config.dim_enabled = dim;
                    config.sem_enabled = sem;
                    let output = train::<f64>(&config)?;
                    Ok(AblationOutcome {
                        name: name.to_string(),
                        dim_enabled: dim,
                        sem_enabled: sem,
                        history: output.history,
                    })
                })
            })
            .into_iter()
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Comparison table of final accuracies, one row per variant.
pub fn ablation_csv(outcomes: &[AblationOutcome]) -> String {
    let mut out = String::from(
        "variant,dim_enabled,sem_enabled,final_source_accuracy,final_target_accuracy\n",
    );
    for o in outcomes {
        let record = o.final_record();
        let target = record
            .target_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.name, o.dim_enabled, o.sem_enabled, record.source_accuracy, target
        ));
    }
    out
}

/// Run the ablation and write each variant's metrics under its own
/// subdirectory, plus a merged `ablation.csv`.
pub fn ablate_to_dir(base: &RunConfig, out_dir: &Path) -> Result<Vec<AblationOutcome>> {
    let outcomes = ablation_run(base)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    for o in &outcomes {
        let dir = out_dir.join(&o.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(&dir.join("metrics.jsonl"), &metrics_jsonl(&o.history)?)?;
        write_text(&dir.join("summary.csv"), &summary_csv(&o.history))?;
    }
    write_text(&out_dir.join("ablation.csv"), &ablation_csv(&outcomes))?;
    Ok(outcomes)
}

/// Dimensions of the reference gradient check: a full model (DIM and SEM
/// on) over one balanced batch.
pub const GRADCHECK_INPUT_DIM: usize = 5;
pub const GRADCHECK_HIDDEN_DIM: usize = 8;
pub const GRADCHECK_NUM_CLASSES: usize = 3;
pub const GRADCHECK_BATCH: usize = 4;

/// Finite-difference check of every trainable parameter of a full model on
/// one random batch.
///
/// Two parts of the objective are not derivatives of the forward value and
/// are handled accordingly: mask values and pseudo-scores are deliberate
/// gradient stops, so they are pinned at the analytic pass's values; and
/// the gradient reversal propagates the exact negation of the true
/// derivative, so the check runs with the reversal bypassed. The reversal's
/// own contract (exact negation, exact zero at λ=0) is verified separately
/// and bit-exactly.
pub fn full_model_gradcheck(seed: u64) -> Result<GradReport<f64>> {
    let config = ModelConfig {
        input_dim: GRADCHECK_INPUT_DIM,
        hidden_dim: GRADCHECK_HIDDEN_DIM,
        num_classes: GRADCHECK_NUM_CLASSES,
        backbone_depth: 2,
        ..ModelConfig::default()
    };
    let model: WemnetModel<f64> = WemnetModel::new(config, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let b = GRADCHECK_BATCH;
    let mut y_s = Array2::zeros((b, GRADCHECK_NUM_CLASSES));
    for i in 0..b {
        y_s[(i, i % GRADCHECK_NUM_CLASSES)] = 1.0;
    }
    let batch = PairedBatch {
        x_s: Array2::from_shape_fn((b, GRADCHECK_INPUT_DIM), |_| rng.gen_range(-1.0..1.0)),
        y_s,
        x_t: Array2::from_shape_fn((b, GRADCHECK_INPUT_DIM), |_| rng.gen_range(-1.0..1.0)),
        epoch: 0,
        step: 0,
    };

    let constants = model.total_loss(&Tape::new(), &batch)?.constants;
    let params = model.trainable_parameters();
    let refs: Vec<(&str, &Tensor<f64>)> =
        params.iter().map(|(n, p)| (n.as_str(), p)).collect();
    finite_difference_check(&refs, DEFAULT_STEP, || {
        let tape = Tape::new();
        let out = model.total_loss_with(&tape, &batch, Some(&constants), GrlMode::Bypass)?;
        Ok((tape, out.total))
    })
}
