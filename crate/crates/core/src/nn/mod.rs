//! Dense f64 MLP engine: forward/backward with softmax cross-entropy, batchnorm
//! folding, and the IDX dataset reader.
//!
//! Batches are row-major `[batch × features]`; layer weights are `[out × in]`.
//! Hidden layers use ReLU, the last layer is linear (logits).

mod dataset;

pub use dataset::{load_idx_dataset, Dataset, DatasetError};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batchnorm variance must be positive, channel {channel} has {value}")]
    NonPositiveVariance { channel: usize, value: f64 },
    #[error("label {label} out of range for {classes} logits")]
    Label { label: usize, classes: usize },
    #[error("a model needs at least one layer")]
    Empty,
}

/// Batchnorm `γ (z − μ) / √(σ² + ε) + β`. Inference uses the stored
/// statistics; training passes use the batch's own. `gamma` and `beta` are
/// trainable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
            eps: 1e-5,
        }
    }

    /// Per-channel multiplier `γ / √(σ² + ε)`.
    pub fn scale(&self) -> Result<Array1<f64>, NnError> {
        for (channel, &v) in self.var.iter().enumerate() {
            if !(v > 0.0) {
                return Err(NnError::NonPositiveVariance { channel, value: v });
            }
        }
        Ok(Zip::from(&self.gamma)
            .and(&self.var)
            .map_collect(|&g, &v| g / (v + self.eps).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub batchnorm: Option<BatchNorm>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self, NnError> {
        let layer = Self {
            weights,
            bias,
            batchnorm: None,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            batchnorm: None,
        }
    }

    /// He-normal initialisation, zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, batchnorm: bool, rng: &mut R) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite deviation");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
            batchnorm: batchnorm.then(|| BatchNorm::identity(out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (out, inp) = self.weights.dim();
        if out == 0 || inp == 0 {
            return Err(NnError::Shape(format!("layer must be at least 1x1, got {out}x{inp}")));
        }
        if self.bias.len() != out {
            return Err(NnError::Shape(format!(
                "bias has {} entries for {out} outputs",
                self.bias.len()
            )));
        }
        if let Some(bn) = &self.batchnorm {
            for (name, v) in [("gamma", &bn.gamma), ("beta", &bn.beta), ("mean", &bn.mean), ("var", &bn.var)] {
                if v.len() != out {
                    return Err(NnError::Shape(format!(
                        "batchnorm {name} has {} entries for {out} outputs",
                        v.len()
                    )));
                }
            }
            bn.scale()?;
        }
        Ok(())
    }

    /// `x Wᵀ + b` followed by batchnorm when present. Returns (linear, normalized).
    fn forward_parts(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut lin = x.dot(&self.weights.t());
        lin += &self.bias;
        let out = match &self.batchnorm {
            None => lin.clone(),
            Some(bn) => {
                let scale = bn.scale().expect("validated batchnorm");
                let shift = &bn.beta - &(&bn.mean * &scale);
                &lin * &scale + &shift
            }
        };
        (lin, out)
    }

    /// Like `forward_parts`, but batchnorm normalizes with the batch mean and
    /// (biased) variance, which are also returned.
    fn forward_parts_batch(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Option<BatchStats>) {
        let mut lin = x.dot(&self.weights.t());
        lin += &self.bias;
        match &self.batchnorm {
            None => {
                let out = lin.clone();
                (lin, out, None)
            }
            Some(bn) => {
                let mean = lin.mean_axis(Axis(0)).expect("non-empty batch");
                let var = lin.var_axis(Axis(0), 0.0);
                let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                let out = &(&(&lin - &mean) * &(&inv_std * &bn.gamma)) + &bn.beta;
                (lin, out, Some(BatchStats { mean, inv_std }))
            }
        }
    }
}

/// Folds batchnorm into a per-channel multiplier and bias so that
/// `bn(Wx + b) == alpha ⊙ (Wx) + bias_f`. Without batchnorm `alpha = 1`.
pub fn fold_batchnorm(layer: &DenseLayer) -> Result<(Array1<f64>, Array1<f64>), NnError> {
    match &layer.batchnorm {
        None => Ok((Array1::ones(layer.out_dim()), layer.bias.clone())),
        Some(bn) => {
            let scale = bn.scale()?;
            let bias = &(&(&layer.bias - &bn.mean) * &scale) + &bn.beta;
            Ok((scale, bias))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

/// Per-channel batch statistics of a training-mode batchnorm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    pub inputs: Vec<Array2<f64>>,
    /// `x Wᵀ + b` per layer.
    pub linear: Vec<Array2<f64>>,
    /// Pre-activation per layer (after batchnorm).
    pub pre_activation: Vec<Array2<f64>>,
    /// Batch statistics per layer for training-mode passes; `None` where the
    /// stored statistics were used or there is no batchnorm.
    pub batch_stats: Vec<Option<BatchStats>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    /// Summed (not averaged) cross-entropy over the batch.
    pub loss: f64,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for layer in &layers {
            layer.validate()?;
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::Shape(format!(
                    "layer {k} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random model with feature sizes `dims = [in, h1, ..., out]`.
    pub fn init<R: Rng>(dims: &[usize], batchnorm: bool, rng: &mut R) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::Empty);
        }
        let layers = dims
            .windows(2)
            .map(|d| DenseLayer::init(d[0], d[1], batchnorm, rng))
            .collect();
        Self::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        dims
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Every layer has at most 512 inputs and outputs.
    pub fn is_conform(&self) -> bool {
        self.layers.iter().all(|l| l.in_dim() <= 512 && l.out_dim() <= 512)
    }

    /// Inference-mode forward pass that keeps what `backward` needs.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.forward_mode(batch, false)
    }

    /// Training-mode forward pass: batchnorm layers normalize with the batch's
    /// own statistics. Identical to [`Self::forward`] without batchnorm.
    pub fn forward_train(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.forward_mode(batch, true)
    }

    fn forward_mode(&self, batch: ArrayView2<f64>, train: bool) -> Result<(Array2<f64>, ForwardCache), NnError> {
        if batch.ncols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.in_dim()
            )));
        }
        if batch.nrows() == 0 {
            return Err(NnError::Shape("empty batch".into()));
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            linear: Vec::with_capacity(n),
            pre_activation: Vec::with_capacity(n),
            batch_stats: Vec::with_capacity(n),
        };
        let mut x = batch.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let (lin, pre, stats) = if train {
                layer.forward_parts_batch(x.view())
            } else {
                let (lin, pre) = layer.forward_parts(x.view());
                (lin, pre, None)
            };
            let next = if k + 1 < n { pre.mapv(relu) } else { pre.clone() };
            cache.inputs.push(x);
            cache.linear.push(lin);
            cache.pre_activation.push(pre);
            cache.batch_stats.push(stats);
            x = next;
        }
        Ok((x, cache))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        if batch.ncols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.in_dim()
            )));
        }
        let n = self.layers.len();
        let mut x = batch.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let (_, pre) = layer.forward_parts(x.view());
            x = if k + 1 < n { pre.mapv(relu) } else { pre };
        }
        Ok(x)
    }

    /// Softmax cross-entropy gradients, summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients, NnError> {
        let n = self.layers.len();
        if cache.pre_activation.len() != n
            || cache.inputs.len() != n
            || cache.linear.len() != n
            || cache.batch_stats.len() != n
        {
            return Err(NnError::Shape(format!(
                "cache holds {} layers, model has {n}",
                cache.pre_activation.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            let (b, o) = cache.pre_activation[k].dim();
            if o != layer.out_dim() || cache.inputs[k].ncols() != layer.in_dim() || cache.inputs[k].nrows() != b {
                return Err(NnError::Shape(format!("stale cache at layer {k}")));
            }
        }
        let logits = &cache.pre_activation[n - 1];
        if logits.nrows() != labels.len() {
            return Err(NnError::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                logits.nrows()
            )));
        }
        let (mut delta, loss) = softmax_cross_entropy(logits.view(), labels)?;

        let mut grads = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if k + 1 < n {
                Zip::from(&mut delta)
                    .and(&cache.pre_activation[k])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            let (gamma, beta) = match (&layer.batchnorm, &cache.batch_stats[k]) {
                (None, _) => (None, None),
                (Some(bn), None) => {
                    let scale = bn.scale()?;
                    let inv_std = bn.var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = (&cache.linear[k] - &bn.mean) * &inv_std;
                    let dgamma = (&delta * &xhat).sum_axis(Axis(0));
                    let dbeta = delta.sum_axis(Axis(0));
                    delta *= &scale;
                    (Some(dgamma), Some(dbeta))
                }
                (Some(bn), Some(stats)) => {
                    let xhat = (&cache.linear[k] - &stats.mean) * &stats.inv_std;
                    let dgamma = (&delta * &xhat).sum_axis(Axis(0));
                    let dbeta = delta.sum_axis(Axis(0));
                    // dz = γ/σ · (dy − mean(dy) − x̂ · mean(dy · x̂)), per channel.
                    let b = delta.nrows() as f64;
                    let mean_dy = &dbeta / b;
                    let mean_dy_xhat = &dgamma / b;
                    let mut dz = &delta - &mean_dy;
                    dz -= &(&xhat * &mean_dy_xhat);
                    dz *= &(&stats.inv_std * &bn.gamma);
                    delta = dz;
                    (Some(dgamma), Some(dbeta))
                }
            };
            let weights = delta.t().dot(&cache.inputs[k]);
            let bias = delta.sum_axis(Axis(0));
            let next = if k > 0 { Some(delta.dot(&layer.weights)) } else { None };
            grads.push(LayerGradients {
                weights,
                bias,
                gamma,
                beta,
            });
            if let Some(d) = next {
                delta = d;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads, loss })
    }

    /// Summed loss of a batch without gradients.
    pub fn loss(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<f64, NnError> {
        let logits = self.predict(batch)?;
        Ok(softmax_cross_entropy(logits.view(), labels)?.1)
    }

    /// Summed loss of a batch in training mode.
    pub fn loss_train(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<f64, NnError> {
        let (logits, _) = self.forward_train(batch)?;
        Ok(softmax_cross_entropy(logits.view(), labels)?.1)
    }

    /// Sets each batchnorm's statistics to the mean and variance of its
    /// input (the layer's linear output) over `batch`.
    pub fn calibrate_batchnorm(&mut self, batch: ArrayView2<f64>) -> Result<(), NnError> {
        if batch.ncols() != self.in_dim() {
            return Err(NnError::Shape("calibration batch width".into()));
        }
        let n = self.layers.len();
        let mut x = batch.to_owned();
        for k in 0..n {
            let layer = &mut self.layers[k];
            if let Some(bn) = layer.batchnorm.as_mut() {
                let mut lin = x.dot(&layer.weights.t());
                lin += &layer.bias;
                let mean = lin.mean_axis(Axis(0)).expect("non-empty batch");
                let var = lin.var_axis(Axis(0), 0.0).mapv(|v| v.max(1e-8));
                bn.mean = mean;
                bn.var = var;
            }
            let (_, pre) = self.layers[k].forward_parts(x.view());
            x = if k + 1 < n { pre.mapv(relu) } else { pre };
        }
        Ok(())
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Returns (`softmax − onehot`, summed cross-entropy).
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(Array2<f64>, f64), NnError> {
    let classes = logits.ncols();
    let mut delta = logits.to_owned();
    let mut loss = 0.0;
    for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
        if label >= classes {
            return Err(NnError::Label { label, classes });
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss -= row[label].max(f64::MIN_POSITIVE).ln();
        row[label] -= 1.0;
    }
    Ok((delta, loss))
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: PartialOrd + Copy>(scores: ArrayView2<T>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}
