//! Linear layers, the MLP backbone, SGD with momentum and weight decay,
//! and a bit-exact parameter checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// A fully-connected layer with weight `[out, in]` and optional bias `[1, out]`.
///
/// Forward is `x . weight^T (+ bias)`. The heads and the ENC/DEC layers of
/// the masking modules are constructed bias-free so that the masks derived
/// from their weights are the whole story.
pub struct LinearLayer<F: Scalar> {
    weight: Tensor<F>,
    bias: Option<Tensor<F>>,
}

impl<F: Scalar> LinearLayer<F> {
    /// Layer with fan-in uniform initialization, `U(-1/sqrt(in), 1/sqrt(in))`
    /// for the weight and (when present) the bias.
    pub fn fan_in_init(
        in_features: usize,
        out_features: usize,
        use_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let mut sample = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::lit(rng.gen_range(-bound..bound))).collect()
        };
        let weight = Array2::from_shape_vec(
            (out_features, in_features),
            sample(out_features * in_features),
        )
        .expect("length matches shape");
        let bias = use_bias.then(|| {
            let b = Array2::from_shape_vec((1, out_features), sample(out_features))
                .expect("length matches shape");
            Tensor::param(b)
        });
        Self {
            weight: Tensor::param(weight),
            bias,
        }
    }

    /// Square bias-free layer initialized at identity plus
    /// `N(0, noise_std^2)` perturbation.
    pub fn near_identity(n: usize, noise_std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, noise_std).expect("finite std");
        let mut w = Array2::eye(n);
        for v in w.iter_mut() {
            *v += F::lit(dist.sample(rng));
        }
        Self {
            weight: Tensor::param(w),
            bias: None,
        }
    }

    /// Exact identity layer, bias-free (test fixture).
    pub fn identity(n: usize) -> Self {
        Self {
            weight: Tensor::param(Array2::eye(n)),
            bias: None,
        }
    }

    /// Layer with explicitly supplied parameters.
    pub fn from_parts(weight: Tensor<F>, bias: Option<Tensor<F>>) -> Result<Self> {
        if let Some(b) = &bias {
            let (rows, cols) = b.shape();
            if rows != 1 || cols != weight.rows() {
                return Err(Error::shape("linear bias", weight.shape(), (rows, cols)));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn use_bias(&self) -> bool {
        self.bias.is_some()
    }

    /// The weight tensor (mask computation reads this directly).
    pub fn weight(&self) -> &Tensor<F> {
        &self.weight
    }

    /// Snapshot of the weight values.
    pub fn weight_array(&self) -> Array2<F> {
        self.weight.value_clone()
    }

    /// `x[b,in] -> x . W^T (+ bias)`, shape `[b, out]`.
    pub fn forward(&self, tape: &Tape<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let h = tape.matmul_bt(x, &self.weight)?;
        match &self.bias {
            Some(b) => tape.add(&h, b),
            None => Ok(h),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor<F>> {
        let mut p = vec![self.weight.clone()];
        if let Some(b) = &self.bias {
            p.push(b.clone());
        }
        p
    }

    /// Copy with fresh storage (for snapshot evaluation on other threads
    /// the caller re-wraps values; within a thread this is a plain fork).
    pub fn deep_clone(&self) -> Self {
        Self {
            weight: self.weight.deep_clone(),
            bias: self.bias.as_ref().map(Tensor::deep_clone),
        }
    }
}

/// Stack of linear layers with ReLU between them; the last layer has no
/// activation.
pub struct MlpBackbone<F: Scalar> {
    layers: Vec<LinearLayer<F>>,
}

impl<F: Scalar> MlpBackbone<F> {
    /// Backbone through the widths in `dims` (e.g. `[d_in, 64, 64]`), each
    /// layer fan-in initialized with bias.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Validation(format!(
                "backbone needs at least input and output widths, got {} entries",
                dims.len()
            )));
        }
        if let Some(&z) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::Validation(format!("backbone width {z} is invalid")));
        }
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::fan_in_init(w[0], w[1], true, rng))
            .collect();
        Ok(Self { layers })
    }

    /// Backbone from explicit layers (test fixture).
    pub fn from_layers(layers: Vec<LinearLayer<F>>) -> Self {
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, LinearLayer::in_features)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, LinearLayer::out_features)
    }

    pub fn forward(&self, tape: &Tape<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(&h);
            }
        }
        Ok(h)
    }

    pub fn parameters(&self) -> Vec<Tensor<F>> {
        self.layers.iter().flat_map(LinearLayer::parameters).collect()
    }

    /// Named parameters, `layer{i}.weight` / `layer{i}.bias`.
    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{i}.weight"), layer.weight.clone()));
            if let Some(b) = &layer.bias {
                out.push((format!("{prefix}.layer{i}.bias"), b.clone()));
            }
        }
        out
    }

    pub fn deep_clone(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LinearLayer::deep_clone).collect(),
        }
    }
}

/// SGD with momentum and weight decay.
///
/// Update rule per parameter: `v <- mu*v + (g + wd*w); w <- w - lr*v`.
/// Gradients are consumed (zeroed) by the step.
pub struct SgdOptimizer<F: Scalar> {
    params: Vec<(String, Tensor<F>)>,
    velocity: Vec<Array2<F>>,
    learning_rate: F,
    momentum: F,
    weight_decay: F,
}

impl<F: Scalar> SgdOptimizer<F> {
    pub fn new(
        params: Vec<(String, Tensor<F>)>,
        learning_rate: F,
        momentum: F,
        weight_decay: F,
    ) -> Self {
        let velocity = params
            .iter()
            .map(|(_, p)| Array2::zeros(p.shape()))
            .collect();
        Self {
            params,
            velocity,
            learning_rate,
            momentum,
            weight_decay,
        }
    }

    /// Apply one update to every registered parameter.
    ///
    /// A registered parameter without a gradient is an error: it means the
    /// loss that was just differentiated does not reach that parameter, so
    /// the caller registered the wrong set.
    pub fn step(&mut self) -> Result<()> {
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((name, p), v) in self.params.iter().zip(&mut self.velocity) {
            let g = p.take_grad().ok_or_else(|| {
                Error::Validation(format!("sgd_step: parameter {name} has no gradient"))
            })?;
            p.update_value(|w| {
                ndarray::Zip::from(w).and(v).and(&g).for_each(|w, v, &g| {
                    *v = mu * *v + (g + wd * *w);
                    *w = *w - lr * *v;
                });
            });
        }
        Ok(())
    }

    /// Drop any gradients accumulated since the last step.
    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> &[(String, Tensor<F>)] {
        &self.params
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixDump {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialize named parameters to a JSON key -> matrix map.
///
/// `f64` values survive the JSON round trip bit-exactly (shortest-repr
/// printing, exact parsing), which the checkpoint tests pin down.
pub fn save_parameters<F: Scalar>(
    path: impl AsRef<Path>,
    params: &[(String, Tensor<F>)],
) -> Result<()> {
    let mut map = BTreeMap::new();
    for (name, p) in params {
        let (rows, cols) = p.shape();
        let data = p.value().iter().map(|v| v.to_f64_lossy()).collect();
        map.insert(name.clone(), MatrixDump { rows, cols, data });
    }
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path.as_ref(), text)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

/// Load a checkpoint written by [`save_parameters`] into existing tensors.
///
/// Every registered parameter must be present with matching shape; extra
/// keys in the file are rejected.
pub fn load_parameters<F: Scalar>(
    path: impl AsRef<Path>,
    params: &[(String, Tensor<F>)],
) -> Result<()> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let mut map: BTreeMap<String, MatrixDump> = serde_json::from_str(&text)?;
    for (name, p) in params {
        let dump = map.remove(name).ok_or_else(|| {
            Error::Validation(format!("checkpoint is missing parameter {name}"))
        })?;
        if (dump.rows, dump.cols) != p.shape() {
            return Err(Error::shape("load_parameters", p.shape(), (dump.rows, dump.cols)));
        }
        if dump.data.len() != dump.rows * dump.cols {
            return Err(Error::Validation(format!(
                "checkpoint entry {name} has {} values for a {}x{} matrix",
                dump.data.len(),
                dump.rows,
                dump.cols
            )));
        }
        let values: Vec<F> = dump.data.iter().map(|&v| F::lit(v)).collect();
        let arr = Array2::from_shape_vec((dump.rows, dump.cols), values)
            .expect("length checked above");
        p.assign(arr);
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::Validation(format!(
            "checkpoint contains unknown parameter {extra}"
        )));
    }
    Ok(())
}
