//! Experiment configuration: a JSON-backed description of one training run.
//!
//! The file format mirrors the struct field names exactly and rejects
//! unknown keys, so typos fail loudly instead of silently running defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, make_blob_shift, make_two_moons_shift, Dataset, DomainKind,
};
use crate::error::{Error, Result};
use crate::masks::ThresholdMode;
use crate::model::ModelConfig;
use crate::scalar::Scalar;

fn default_true() -> bool {
    true
}

fn default_epochs() -> usize {
    20
}

fn default_batch() -> usize {
    32
}

fn default_lambda() -> f64 {
    1.0
}

fn default_n_per_domain() -> usize {
    500
}

fn default_noise_sigma() -> f64 {
    0.1
}

fn default_rotation_deg() -> f64 {
    30.0
}

fn default_n_classes() -> usize {
    3
}

fn default_class_sep() -> f64 {
    2.0
}

fn default_mean_shift() -> Vec<f64> {
    vec![1.0]
}

fn default_nuisance_dims() -> usize {
    3
}

fn default_hidden_dim() -> usize {
    64
}

fn default_backbone_depth() -> usize {
    2
}

fn default_lr() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    0.001
}

/// Which dataset a run trains on. Generator parameters default to the
/// standard shifted-two-moons setting.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoons {
        #[serde(default = "default_n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "default_noise_sigma")]
        noise_sigma: f64,
        #[serde(default = "default_rotation_deg")]
        rotation_deg: f64,
        #[serde(default)]
        translation: [f64; 2],
    },
    Blobs {
        #[serde(default = "default_n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "default_n_classes")]
        n_classes: usize,
        #[serde(default = "default_class_sep")]
        class_sep: f64,
        #[serde(default = "default_mean_shift")]
        mean_shift: Vec<f64>,
        #[serde(default = "default_nuisance_dims")]
        nuisance_dims: usize,
    },
    Csv {
        source_path: String,
        target_path: String,
        num_classes: usize,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::TwoMoons {
            n_per_domain: default_n_per_domain(),
            noise_sigma: default_noise_sigma(),
            rotation_deg: default_rotation_deg(),
            translation: [0.0, 0.0],
        }
    }
}

impl DatasetConfig {
    /// Class count implied by the dataset description.
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::TwoMoons { .. } => 2,
            DatasetConfig::Blobs { n_classes, .. } => *n_classes,
            DatasetConfig::Csv { num_classes, .. } => *num_classes,
        }
    }

    /// Materialize the source and target datasets.
    pub fn build<F: Scalar>(&self, seed: u64) -> Result<(Dataset<F>, Dataset<F>)> {
        match self {
            DatasetConfig::TwoMoons {
                n_per_domain,
                noise_sigma,
                rotation_deg,
                translation,
            } => make_two_moons_shift(*n_per_domain, *noise_sigma, *rotation_deg, *translation, seed),
            DatasetConfig::Blobs {
                n_per_domain,
                n_classes,
                class_sep,
                mean_shift,
                nuisance_dims,
            } => make_blob_shift(
                *n_per_domain,
                *n_classes,
                *class_sep,
                mean_shift,
                *nuisance_dims,
                seed,
            ),
            DatasetConfig::Csv {
                source_path,
                target_path,
                ..
            } => {
                let source = load_csv(Path::new(source_path), DomainKind::Source)?;
                let target = load_csv(Path::new(target_path), DomainKind::Target)?;
                Ok((source, target))
            }
        }
    }
}

/// Model widths and mask options. Input width and class count come from the
/// dataset, so they cannot drift out of sync with it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_backbone_depth")]
    pub backbone_depth: usize,
    /// Per-row classifier thresholds instead of one global mean.
    #[serde(default)]
    pub per_row_threshold: bool,
    /// Compute target pseudo-scores from raw features instead of the DIM
    /// output.
    #[serde(default)]
    pub pseudo_from_raw: bool,
    /// Reversal strength used by the constant schedule.
    #[serde(default = "default_lambda")]
    pub grl_lambda: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: default_hidden_dim(),
            backbone_depth: default_backbone_depth(),
            per_row_threshold: false,
            pseudo_from_raw: false,
            grl_lambda: default_lambda(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

/// Reversal-strength schedule over training progress.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GrlSchedule {
    /// Fixed at the configured `grl_lambda`.
    Constant,
    /// Warm-up `2/(1+e^{-10p}) - 1` over progress `p` in `[0,1)`.
    Ramp,
}

impl Default for GrlSchedule {
    fn default() -> Self {
        GrlSchedule::Constant
    }
}

/// Everything one training run needs; (config, seed) determine every
/// emitted byte.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_per_domain: usize,
    /// Weight of the adversarial term in the total loss.
    #[serde(default = "default_lambda")]
    pub loss_lambda: f64,
    #[serde(default)]
    pub grl_schedule: GrlSchedule,
    #[serde(default = "default_true")]
    pub dim_enabled: bool,
    #[serde(default = "default_true")]
    pub sem_enabled: bool,
    /// Standardize both domains by source statistics before training.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; may instead come from the command line.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            epochs: default_epochs(),
            batch_per_domain: default_batch(),
            loss_lambda: default_lambda(),
            grl_schedule: GrlSchedule::default(),
            dim_enabled: true,
            sem_enabled: true,
            standardize: true,
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_per_domain == 0 {
            return Err(Error::Config("batch_per_domain must be positive".to_string()));
        }
        if !self.loss_lambda.is_finite() || self.loss_lambda < 0.0 {
            return Err(Error::Config(format!(
                "loss_lambda must be finite and non-negative, got {}",
                self.loss_lambda
            )));
        }
        for (name, v) in [
            ("lr", self.optimizer.lr),
            ("momentum", self.optimizer.momentum),
            ("weight_decay", self.optimizer.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "optimizer.{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.optimizer.lr == 0.0 {
            return Err(Error::Config("optimizer.lr must be positive".to_string()));
        }
        match &self.dataset {
            DatasetConfig::TwoMoons {
                n_per_domain,
                noise_sigma,
                ..
            } => {
                if *n_per_domain < 4 {
                    return Err(Error::Config(
                        "two_moons n_per_domain must be at least 4".to_string(),
                    ));
                }
                if !noise_sigma.is_finite() || *noise_sigma < 0.0 {
                    return Err(Error::Config(format!(
                        "two_moons noise_sigma must be finite and non-negative, got {noise_sigma}"
                    )));
                }
            }
            DatasetConfig::Blobs {
                n_per_domain,
                n_classes,
                ..
            } => {
                if *n_classes < 2 {
                    return Err(Error::Config("blobs n_classes must be at least 2".to_string()));
                }
                if *n_per_domain == 0 || n_per_domain % n_classes != 0 {
                    return Err(Error::Config(format!(
                        "blobs n_per_domain ({n_per_domain}) must be a positive multiple of \
                         n_classes ({n_classes})"
                    )));
                }
            }
            DatasetConfig::Csv { num_classes, .. } => {
                if *num_classes < 2 {
                    return Err(Error::Config("csv num_classes must be at least 2".to_string()));
                }
            }
        }
        self.model_config(self.dataset_input_dim_hint()).validate()
    }

    /// Width hint for validation only; the real width comes from built data.
    fn dataset_input_dim_hint(&self) -> usize {
        match &self.dataset {
            DatasetConfig::TwoMoons { .. } => 2,
            DatasetConfig::Blobs {
                n_classes,
                nuisance_dims,
                ..
            } => n_classes + nuisance_dims,
            DatasetConfig::Csv { .. } => 1,
        }
    }

    /// Assemble the model hyperparameters for a given input width.
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.model.hidden_dim,
            num_classes: self.dataset.num_classes(),
            backbone_depth: self.model.backbone_depth,
            dim_enabled: self.dim_enabled,
            sem_enabled: self.sem_enabled,
            grl_lambda: self.model.grl_lambda,
            loss_lambda: self.loss_lambda,
            threshold_mode: if self.model.per_row_threshold {
                ThresholdMode::PerRow
            } else {
                ThresholdMode::Global
            },
            pseudo_from_raw: self.model.pseudo_from_raw,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}
