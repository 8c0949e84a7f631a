//! Model assembly: backbone, heads, the two weight-mask modules, and the
//! combined training objective.
//!
//! The classifier branch sees features with mask-selected domain content
//! subtracted (DIM); the discriminator branch sees gradient-reversed
//! features with mask-selected class content added (SEM). Per-module
//! enable flags reduce each branch to its plain form for ablations.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PairedBatch;
use crate::error::{Error, Result};
use crate::masks::{
    batch_class_mask, class_mask, concat_batch_masks, domain_mask, ClassMask, DomainMask,
    MaskOrigin, ThresholdMode,
};
use crate::nn::{LinearLayer, MlpBackbone};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Standard deviation of the noise around identity in ENC/DEC initialization.
const ENC_DEC_NOISE_STD: f64 = 0.01;

/// Whether the adversarial branch applies gradient reversal or passes
/// gradients through unchanged (diagnostic use).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GrlMode {
    Reverse,
    Bypass,
}

/// Static model hyperparameters.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Feature width N_h shared by the backbone output and all heads.
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Number of linear layers in the backbone (2 means input->N_h->N_h).
    pub backbone_depth: usize,
    pub dim_enabled: bool,
    pub sem_enabled: bool,
    /// Gradient-reversal strength; 1.0 unless a warm-up schedule drives it.
    pub grl_lambda: f64,
    /// Weight of the adversarial term in the total loss.
    pub loss_lambda: f64,
    /// Classifier threshold aggregation (global mean by default).
    pub threshold_mode: ThresholdMode,
    /// Compute pseudo-scores from raw features instead of the DIM output.
    pub pseudo_from_raw: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 64,
            num_classes: 2,
            backbone_depth: 2,
            dim_enabled: true,
            sem_enabled: true,
            grl_lambda: 1.0,
            loss_lambda: 1.0,
            threshold_mode: ThresholdMode::Global,
            pseudo_from_raw: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model widths must be positive".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.backbone_depth == 0 {
            return Err(Error::Config("backbone_depth must be positive".to_string()));
        }
        for (name, v) in [("grl_lambda", self.grl_lambda), ("loss_lambda", self.loss_lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mask values used by one forward pass. They are data, not graph nodes;
/// freezing them lets finite differencing probe exactly the function the
/// tape differentiates.
#[derive(Clone, Debug)]
pub struct StepConstants<F> {
    /// Domain channel mask `1 x N_h` (all zeros when DIM is disabled).
    pub m_d: Array2<F>,
    /// Per-sample class mask for the concatenated batch (all zeros when SEM
    /// is disabled).
    pub m_batch: Array2<F>,
}

/// Tensors exposed by one full forward pass over a paired batch.
pub struct ForwardOutputs<F: Scalar> {
    /// Backbone features for the concatenated batch, source rows first.
    pub f: Tensor<F>,
    /// DIM output per row (equals `f` when DIM is disabled).
    pub f_hat_d: Tensor<F>,
    /// Input handed to the discriminator (SEM output, or the reversed
    /// features when SEM is disabled).
    pub f_hat_c: Tensor<F>,
    /// Classifier logits for the concatenated batch.
    pub class_logits: Tensor<F>,
    /// Discriminator logits, one column.
    pub domain_logits: Tensor<F>,
    /// Gradient-stopped pseudo-scores for the target rows.
    pub p_t: Tensor<F>,
}

/// Losses and intermediates for one training step.
pub struct StepOutputs<F: Scalar> {
    pub l_cls: Tensor<F>,
    pub l_adv: Tensor<F>,
    pub total: Tensor<F>,
    pub outputs: ForwardOutputs<F>,
    pub constants: StepConstants<F>,
}

pub struct WemnetModel<F: Scalar> {
    backbone: MlpBackbone<F>,
    classifier: LinearLayer<F>,
    discriminator: LinearLayer<F>,
    enc_d: LinearLayer<F>,
    dec_d: LinearLayer<F>,
    enc_c: LinearLayer<F>,
    dec_c: LinearLayer<F>,
    config: ModelConfig,
    grl_lambda: F,
    loss_lambda: F,
}

impl<F: Scalar> WemnetModel<F> {
    /// Build all components from one seeded stream, so models that differ
    /// only in enable flags start from identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let mut widths = vec![config.input_dim];
        widths.extend(std::iter::repeat(h).take(config.backbone_depth));
        let backbone = MlpBackbone::new(&widths, &mut rng)?;
        let classifier = LinearLayer::fan_in_init(h, config.num_classes, false, &mut rng);
        let discriminator = LinearLayer::fan_in_init(h, 1, false, &mut rng);
        let enc_d = LinearLayer::near_identity(h, ENC_DEC_NOISE_STD, &mut rng);
        let dec_d = LinearLayer::near_identity(h, ENC_DEC_NOISE_STD, &mut rng);
        let enc_c = LinearLayer::near_identity(h, ENC_DEC_NOISE_STD, &mut rng);
        let dec_c = LinearLayer::near_identity(h, ENC_DEC_NOISE_STD, &mut rng);
        debug_assert!(!classifier.use_bias() && !discriminator.use_bias());
        let grl_lambda = F::lit(config.grl_lambda);
        let loss_lambda = F::lit(config.loss_lambda);
        Ok(Self {
            backbone,
            classifier,
            discriminator,
            enc_d,
            dec_d,
            enc_c,
            dec_c,
            config,
            grl_lambda,
            loss_lambda,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grl_lambda(&self) -> F {
        self.grl_lambda
    }

    /// Drive the reversal strength (warm-up schedules call this per step).
    pub fn set_grl_lambda(&mut self, lambda: F) {
        self.grl_lambda = lambda;
    }

    pub fn dim_enabled(&self) -> bool {
        self.config.dim_enabled
    }

    pub fn sem_enabled(&self) -> bool {
        self.config.sem_enabled
    }

    pub fn set_dim_enabled(&mut self, on: bool) {
        self.config.dim_enabled = on;
    }

    pub fn set_sem_enabled(&mut self, on: bool) {
        self.config.sem_enabled = on;
    }

    pub fn classifier_weight(&self) -> &Tensor<F> {
        self.classifier.weight()
    }

    pub fn discriminator_weight(&self) -> &Tensor<F> {
        self.discriminator.weight()
    }

    /// Backbone features `G_f(x)`.
    pub fn features(&self, tape: &Tape<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.backbone.forward(tape, x)
    }

    /// Discriminator logits on arbitrary features, bypassing GRL and SEM.
    /// The domain-error probe feeds `f` and `f̂_d` through here.
    pub fn discriminator_forward(&self, tape: &Tape<F>, f: &Tensor<F>) -> Result<Tensor<F>> {
        self.discriminator.forward(tape, f)
    }

    /// Channel mask from the current discriminator weight.
    pub fn domain_mask(&self) -> Result<DomainMask<F>> {
        domain_mask(&self.discriminator.weight_array())
    }

    /// Per-class mask from the current classifier weight.
    pub fn class_mask(&self) -> Result<ClassMask<F>> {
        class_mask(&self.classifier.weight_array(), self.config.threshold_mode)
    }

    /// DIM with an injected channel mask: `f - DEC_d(ENC_d(f) ⊙ m_d)`.
    pub fn dim_forward_with(
        &self,
        tape: &Tape<F>,
        f: &Tensor<F>,
        m_d: &Array2<F>,
    ) -> Result<Tensor<F>> {
        let mask = Tensor::constant(m_d.clone());
        let e = self.enc_d.forward(tape, f)?;
        let masked = tape.mul(&e, &mask)?;
        let d = self.dec_d.forward(tape, &masked)?;
        tape.sub(f, &d)
    }

    /// DIM with the mask freshly computed from the live discriminator weight.
    pub fn dim_forward(&self, tape: &Tape<F>, f: &Tensor<F>) -> Result<Tensor<F>> {
        self.dim_forward_with(tape, f, &self.domain_mask()?.mask)
    }

    /// SEM with an injected batch mask: `f + DEC_c(ENC_c(f) ⊙ m_batch)`.
    pub fn sem_forward(
        &self,
        tape: &Tape<F>,
        f: &Tensor<F>,
        m_batch: &Array2<F>,
    ) -> Result<Tensor<F>> {
        if m_batch.dim() != (f.rows(), f.cols()) {
            return Err(Error::shape("sem_forward", (f.rows(), f.cols()), m_batch.dim()));
        }
        let mask = Tensor::constant(m_batch.clone());
        let e = self.enc_c.forward(tape, f)?;
        let masked = tape.mul(&e, &mask)?;
        let d = self.dec_c.forward(tape, &masked)?;
        tape.add(f, &d)
    }

    /// Classifier logits on the deployed path: through DIM when enabled.
    pub fn class_logits(&self, tape: &Tape<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let f = self.features(tape, x)?;
        let input = if self.config.dim_enabled {
            self.dim_forward(tape, &f)?
        } else {
            f
        };
        self.classifier.forward(tape, &input)
    }

    /// Source-only cross-entropy on the deployed classification path. The
    /// feature and label row counts must agree: target rows have no place
    /// here.
    pub fn classification_loss(
        &self,
        tape: &Tape<F>,
        x_s: &Array2<F>,
        y_s: &Array2<F>,
    ) -> Result<Tensor<F>> {
        if x_s.nrows() == 0 {
            return Err(Error::Validation("empty source batch".to_string()));
        }
        if x_s.nrows() != y_s.nrows() {
            return Err(Error::Validation(format!(
                "classification_loss: {} feature rows but {} label rows; \
                 unlabeled (target) rows must not enter this loss",
                x_s.nrows(),
                y_s.nrows()
            )));
        }
        let logits = self.class_logits(tape, &Tensor::constant(x_s.clone()))?;
        tape.cross_entropy(&logits, &Tensor::constant(y_s.clone()))
    }

    /// Gradient-stopped softmax scores the classifier assigns to target
    /// samples, computed on its own training input (DIM output) unless
    /// configured otherwise.
    pub fn pseudo_scores(&self, tape: &Tape<F>, x_t: &Array2<F>) -> Result<Tensor<F>> {
        let f = self.features(tape, &Tensor::constant(x_t.clone()))?;
        let input = if self.config.dim_enabled && !self.config.pseudo_from_raw {
            self.dim_forward(tape, &f)?
        } else {
            f
        };
        let logits = self.classifier.forward(tape, &input)?;
        let scores = tape.softmax_rows(&logits)?;
        Ok(tape.stop_gradient(&scores))
    }

    /// Adversarial BCE over the paired batch, source labeled 1, target 0.
    pub fn adversarial_loss(&self, tape: &Tape<F>, batch: &PairedBatch<F>) -> Result<Tensor<F>> {
        self.adversarial_loss_with(tape, batch, GrlMode::Reverse)
    }

    /// Adversarial loss with the reversal optionally bypassed, for
    /// gradient-contract diagnostics.
    pub fn adversarial_loss_with(
        &self,
        tape: &Tape<F>,
        batch: &PairedBatch<F>,
        grl: GrlMode,
    ) -> Result<Tensor<F>> {
        Ok(self.forward_internal(tape, batch, None, grl)?.l_adv)
    }

    /// Full training objective and all intermediates for one paired batch.
    pub fn total_loss(&self, tape: &Tape<F>, batch: &PairedBatch<F>) -> Result<StepOutputs<F>> {
        self.forward_internal(tape, batch, None, GrlMode::Reverse)
    }

    /// Same computation with mask values pinned, so repeated evaluations
    /// differentiate (and finite-difference) one fixed function.
    pub fn total_loss_frozen(
        &self,
        tape: &Tape<F>,
        batch: &PairedBatch<F>,
        constants: &StepConstants<F>,
    ) -> Result<StepOutputs<F>> {
        self.forward_internal(tape, batch, Some(constants), GrlMode::Reverse)
    }

    /// Fully general forward: optional pinned constants and explicit
    /// reversal mode. Everything else delegates here.
    pub fn total_loss_with(
        &self,
        tape: &Tape<F>,
        batch: &PairedBatch<F>,
        frozen: Option<&StepConstants<F>>,
        grl: GrlMode,
    ) -> Result<StepOutputs<F>> {
        self.forward_internal(tape, batch, frozen, grl)
    }

    fn forward_internal(
        &self,
        tape: &Tape<F>,
        batch: &PairedBatch<F>,
        frozen: Option<&StepConstants<F>>,
        grl: GrlMode,
    ) -> Result<StepOutputs<F>> {
        let (b_s, b_t) = (batch.x_s.nrows(), batch.x_t.nrows());
        if b_s == 0 || b_t == 0 {
            return Err(Error::Validation("empty batch half".to_string()));
        }
        if b_s != b_t {
            return Err(Error::Validation(format!(
                "unbalanced batch: {b_s} source rows vs {b_t} target rows"
            )));
        }
        if batch.y_s.nrows() != b_s {
            return Err(Error::Validation(format!(
                "{} label rows for {} source rows",
                batch.y_s.nrows(),
                b_s
            )));
        }
        let h = self.config.hidden_dim;

        let x_s = Tensor::constant(batch.x_s.clone());
        let x_t = Tensor::constant(batch.x_t.clone());
        let y_s = Tensor::constant(batch.y_s.clone());
        let f_s = self.features(tape, &x_s)?;
        let f_t = self.features(tape, &x_t)?;

        // classifier branch (DIM)
        let m_d: Array2<F> = match (self.config.dim_enabled, frozen) {
            (true, Some(c)) => c.m_d.clone(),
            (true, None) => self.domain_mask()?.mask,
            (false, _) => Array2::zeros((1, h)),
        };
        let (fhat_d_s, fhat_d_t) = if self.config.dim_enabled {
            (
                self.dim_forward_with(tape, &f_s, &m_d)?,
                self.dim_forward_with(tape, &f_t, &m_d)?,
            )
        } else {
            (f_s.clone(), f_t.clone())
        };
        let logits_s = self.classifier.forward(tape, &fhat_d_s)?;
        let logits_t = self.classifier.forward(tape, &fhat_d_t)?;
        let l_cls = tape.cross_entropy(&logits_s, &y_s)?;

        let pseudo_logits = if self.config.pseudo_from_raw && self.config.dim_enabled {
            self.classifier.forward(tape, &f_t)?
        } else {
            logits_t.clone()
        };
        let p_t = tape.stop_gradient(&tape.softmax_rows(&pseudo_logits)?);

        // discriminator branch (SEM behind GRL)
        let f = tape.concat_rows(&f_s, &f_t)?;
        let reversed = match grl {
            GrlMode::Reverse => tape.grad_reverse(&f, self.grl_lambda)?,
            GrlMode::Bypass => f.clone(),
        };
        let m_batch: Array2<F> = match (self.config.sem_enabled, frozen) {
            (true, Some(c)) => c.m_batch.clone(),
            (true, None) => {
                let m_c = self.class_mask()?.mask;
                let src = batch_class_mask(&m_c, &batch.y_s, MaskOrigin::Source)?;
                let tgt = batch_class_mask(&m_c, &p_t.value(), MaskOrigin::Target)?;
                concat_batch_masks(&src, &tgt)?
            }
            (false, _) => Array2::zeros((b_s + b_t, h)),
        };
        let f_hat_c = if self.config.sem_enabled {
            self.sem_forward(tape, &reversed, &m_batch)?
        } else {
            reversed
        };
        let domain_logits = self.discriminator.forward(tape, &f_hat_c)?;
        let mut d_labels = Array2::zeros((b_s + b_t, 1));
        for i in 0..b_s {
            d_labels[(i, 0)] = F::one();
        }
        let l_adv = tape.bce_with_logits(&domain_logits, &Tensor::constant(d_labels))?;

        let weighted = tape.scale(&l_adv, self.loss_lambda);
        let total = tape.add(&l_cls, &weighted)?;

        let outputs = ForwardOutputs {
            f,
            f_hat_d: tape.concat_rows(&fhat_d_s, &fhat_d_t)?,
            f_hat_c,
            class_logits: tape.concat_rows(&logits_s, &logits_t)?,
            domain_logits,
            p_t,
        };
        Ok(StepOutputs {
            l_cls,
            l_adv,
            total,
            outputs,
            constants: StepConstants { m_d, m_batch },
        })
    }

    /// Every parameter with a stable name (checkpoint order).
    pub fn named_parameters(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = self.backbone.named_parameters("backbone");
        out.push(("classifier.weight".to_string(), self.classifier.weight().clone()));
        out.push((
            "discriminator.weight".to_string(),
            self.discriminator.weight().clone(),
        ));
        out.push(("enc_d.weight".to_string(), self.enc_d.weight().clone()));
        out.push(("dec_d.weight".to_string(), self.dec_d.weight().clone()));
        out.push(("enc_c.weight".to_string(), self.enc_c.weight().clone()));
        out.push(("dec_c.weight".to_string(), self.dec_c.weight().clone()));
        out
    }

    /// The parameters the training loss actually reaches under the current
    /// enable flags (the optimizer must register exactly these).
    pub fn trainable_parameters(&self) -> Vec<(String, Tensor<F>)> {
        self.named_parameters()
            .into_iter()
            .filter(|(name, _)| {
                if name.starts_with("enc_d") || name.starts_with("dec_d") {
                    self.config.dim_enabled
                } else if name.starts_with("enc_c") || name.starts_with("dec_c") {
                    self.config.sem_enabled
                } else {
                    true
                }
            })
            .collect()
    }

    pub fn deep_clone(&self) -> Self {
        Self {
            backbone: self.backbone.deep_clone(),
            classifier: self.classifier.deep_clone(),
            discriminator: self.discriminator.deep_clone(),
            enc_d: self.enc_d.deep_clone(),
            dec_d: self.dec_d.deep_clone(),
            enc_c: self.enc_c.deep_clone(),
            dec_c: self.dec_c.deep_clone(),
            config: self.config.clone(),
            grl_lambda: self.grl_lambda,
            loss_lambda: self.loss_lambda,
        }
    }
}
