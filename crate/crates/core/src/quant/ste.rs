use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{assign_with_priors, ecl_assign, init_codebook, AdamConfig, AdamState, Codebook, QuantError};
use crate::codes::{histogram, CodeMatrix, NUM_BASES, NUM_CODES};
use crate::nn::MlpModel;
use crate::quant::entropy_of_histogram;

/// Codes plus codebook of one weight matrix. The matching full-precision
/// shadow weights live in [`QuantizedMlp::shadow`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub codes: CodeMatrix,
    pub codebook: Codebook,
}

impl QuantizedLayer {
    pub fn dequantized(&self) -> Array2<f64> {
        let c = self.codebook.centroids();
        Array2::from_shape_vec(
            (self.codes.rows(), self.codes.cols()),
            self.codes.as_slice().iter().map(|&k| c[k as usize]).collect(),
        )
        .expect("code matrix shape")
    }
}

/// A model under quantization-aware training: full-precision shadow model and
/// one quantized pair per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMlp {
    pub shadow: MlpModel,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedMlp {
    /// Initializes every layer's codebook from its weights and runs a first
    /// assignment starting from priors concentrated on code 0.
    pub fn quantize(shadow: MlpModel, lambda: f64) -> Result<Self, QuantError> {
        let mut layers = Vec::with_capacity(shadow.layers.len());
        for layer in &shadow.layers {
            let w = layer.weights.as_slice().expect("standard layout");
            let mut codebook = Codebook::new(init_codebook(w)?);
            codebook.concentrate_priors_on_zero();
            let codes = ecl_assign(w, &mut codebook, lambda)?.codes;
            layers.push(QuantizedLayer {
                codes: CodeMatrix::new(layer.out_dim(), layer.in_dim(), codes).expect("4-bit codes"),
                codebook,
            });
        }
        Ok(Self { shadow, layers })
    }

    pub fn check(&self) -> Result<(), QuantError> {
        if self.layers.len() != self.shadow.layers.len() {
            return Err(QuantError::MissingShadow {
                layer: self.layers.len().min(self.shadow.layers.len()),
            });
        }
        for (k, (q, s)) in self.layers.iter().zip(&self.shadow.layers).enumerate() {
            if q.codes.rows() != s.out_dim() || q.codes.cols() != s.in_dim() {
                return Err(QuantError::MissingShadow { layer: k });
            }
        }
        Ok(())
    }

    /// The shadow model with every weight matrix replaced by its dequantized
    /// codes; biases and batchnorm are shared.
    pub fn dequantized_model(&self) -> MlpModel {
        let mut model = self.shadow.clone();
        for (layer, q) in model.layers.iter_mut().zip(&self.layers) {
            layer.weights = q.dequantized();
        }
        model
    }

    /// Re-runs the entropy-constrained assignment on the shadow weights with
    /// each codebook's current priors.
    pub fn reassign(&mut self, lambda: f64) -> Result<(), QuantError> {
        self.check()?;
        for (q, s) in self.layers.iter_mut().zip(&self.shadow.layers) {
            let w = s.weights.as_slice().expect("standard layout");
            let codes = ecl_assign(w, &mut q.codebook, lambda)?.codes;
            q.codes = CodeMatrix::new(s.out_dim(), s.in_dim(), codes).expect("4-bit codes");
        }
        Ok(())
    }

    /// Assigns codes under each codebook's current priors without
    /// re-estimating them.
    pub fn reassign_frozen(&mut self, lambda: f64) -> Result<(), QuantError> {
        self.check()?;
        for (q, s) in self.layers.iter_mut().zip(&self.shadow.layers) {
            let w = s.weights.as_slice().expect("standard layout");
            let codes = assign_with_priors(w, &q.codebook, lambda)?;
            q.codes = CodeMatrix::new(s.out_dim(), s.in_dim(), codes).expect("4-bit codes");
        }
        Ok(())
    }

    /// Re-runs the entropy-constrained assignment on the shadow weights with
    /// every codebook's priors first concentrated on code 0, so the result
    /// does not depend on the previous codes.
    pub fn restart(&mut self, lambda: f64) -> Result<(), QuantError> {
        for q in &mut self.layers {
            q.codebook.concentrate_priors_on_zero();
        }
        self.reassign(lambda)
    }

    pub fn histogram(&self) -> [u64; NUM_CODES] {
        let mut h = [0u64; NUM_CODES];
        for q in &self.layers {
            for (a, b) in h.iter_mut().zip(histogram(q.codes.as_slice())) {
                *a += b;
            }
        }
        h
    }

    /// Mean bits per weight over all layers, i.e. the weight-count weighted
    /// average of the per-layer empirical entropies.
    pub fn entropy(&self) -> f64 {
        let total: usize = self.layers.iter().map(|q| q.codes.len()).sum();
        if total == 0 {
            return 0.0;
        }
        self.layers
            .iter()
            .map(|q| entropy_of_histogram(&q.codes.histogram()) * q.codes.len() as f64)
            .sum::<f64>()
            / total as f64
    }

    pub fn sparsity(&self) -> f64 {
        let total: usize = self.layers.iter().map(|q| q.codes.len()).sum();
        let nnz: usize = self.layers.iter().map(|q| q.codes.nnz()).sum();
        if total == 0 {
            0.0
        } else {
            1.0 - nnz as f64 / total as f64
        }
    }
}

/// `δω_i = Σ_j δW_j · B_i,j`: the weight gradient summed over the positions
/// whose code has bit `i` set.
pub fn centroid_gradient(weight_grad: &[f64], codes: &[u8]) -> Result<[f64; NUM_BASES], QuantError> {
    if weight_grad.len() != codes.len() {
        return Err(QuantError::Shape(format!(
            "{} weight gradients for {} codes",
            weight_grad.len(),
            codes.len()
        )));
    }
    // Reduce per code first, then fan out to the bases.
    let mut per_code = [0.0f64; NUM_CODES];
    for (&g, &c) in weight_grad.iter().zip(codes) {
        per_code[(c & 0x0f) as usize] += g;
    }
    let mut out = [0.0; NUM_BASES];
    for (code, g) in per_code.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            if code >> i & 1 == 1 {
                *o += g;
            }
        }
    }
    Ok(out)
}

/// When the basis coefficients take their ADAM step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaCadence {
    /// Every training step.
    #[default]
    EveryStep,
    /// Gradients are accumulated and applied once, right before each
    /// re-assignment.
    PerAssignment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteConfig {
    pub lambda: f64,
    pub weights: AdamConfig,
    pub omega: AdamConfig,
    pub cadence: OmegaCadence,
}

impl Default for SteConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            weights: AdamConfig::default(),
            omega: AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
            cadence: OmegaCadence::EveryStep,
        }
    }
}

/// Straight-through training state: optimizers for the shadow parameters and
/// the bases, plus pending basis gradients for [`OmegaCadence::PerAssignment`].
#[derive(Clone, Debug)]
pub struct SteTrainer {
    pub config: SteConfig,
    shadow_adam: AdamState,
    omega_adam: AdamState,
    pending: Vec<[f64; NUM_BASES]>,
}

impl SteTrainer {
    pub fn new(config: SteConfig) -> Self {
        Self {
            config,
            shadow_adam: AdamState::new(config.weights),
            omega_adam: AdamState::new(config.omega),
            pending: Vec::new(),
        }
    }

    /// Changes both learning rates; optimizer moments are kept.
    pub fn set_learning_rates(&mut self, weights_lr: f64, omega_lr: f64) {
        self.config.weights.lr = weights_lr;
        self.config.omega.lr = omega_lr;
        self.shadow_adam.config.lr = weights_lr;
        self.omega_adam.config.lr = omega_lr;
    }

    /// Training-mode forward and backward on the dequantized weights, ADAM on the shadow
    /// parameters with those gradients, and the summed per-bit gradient for ω.
    /// Codes are left alone. Returns the summed batch loss.
    pub fn step(&mut self, q: &mut QuantizedMlp, batch: ArrayView2<f64>, labels: &[usize]) -> Result<f64, QuantError> {
        q.check()?;
        let effective = q.dequantized_model();
        let (_, cache) = effective.forward_train(batch)?;
        let grads = effective.backward(&cache, labels)?;
        if self.pending.len() != q.layers.len() {
            self.pending = vec![[0.0; NUM_BASES]; q.layers.len()];
        }
        for (k, g) in grads.layers.iter().enumerate() {
            let layer = &mut q.shadow.layers[k];
            let gw = g.weights.as_slice().expect("standard layout");
            self.shadow_adam.update(
                &format!("layer{k}.weights"),
                layer.weights.as_slice_mut().expect("standard layout"),
                gw,
            )?;
            self.shadow_adam.update(
                &format!("layer{k}.bias"),
                layer.bias.as_slice_mut().expect("contiguous"),
                g.bias.as_slice().expect("contiguous"),
            )?;
            if let (Some(bn), Some(dg), Some(db)) = (layer.batchnorm.as_mut(), &g.gamma, &g.beta) {
                self.shadow_adam.update(
                    &format!("layer{k}.bn_gamma"),
                    bn.gamma.as_slice_mut().expect("contiguous"),
                    dg.as_slice().expect("contiguous"),
                )?;
                self.shadow_adam.update(
                    &format!("layer{k}.bn_beta"),
                    bn.beta.as_slice_mut().expect("contiguous"),
                    db.as_slice().expect("contiguous"),
                )?;
            }
            let domega = centroid_gradient(gw, q.layers[k].codes.as_slice())?;
            match self.config.cadence {
                OmegaCadence::EveryStep => self.apply_omega(q, k, domega)?,
                OmegaCadence::PerAssignment => {
                    for (p, d) in self.pending[k].iter_mut().zip(domega) {
                        *p += d;
                    }
                }
            }
        }
        Ok(grads.loss)
    }

    fn apply_omega(&mut self, q: &mut QuantizedMlp, k: usize, grad: [f64; NUM_BASES]) -> Result<(), QuantError> {
        let mut omega = *q.layers[k].codebook.omega();
        self.omega_adam.update(&format!("layer{k}.omega"), &mut omega, &grad)?;
        q.layers[k].codebook.set_omega(omega);
        Ok(())
    }

    fn flush_pending(&mut self, q: &mut QuantizedMlp) -> Result<(), QuantError> {
        if self.config.cadence == OmegaCadence::PerAssignment {
            let pending = std::mem::take(&mut self.pending);
            for (k, g) in pending.into_iter().enumerate() {
                if k < q.layers.len() {
                    self.apply_omega(q, k, g)?;
                }
            }
        }
        Ok(())
    }

    /// Applies any pending basis update, then re-assigns codes with ECL.
    pub fn reassign(&mut self, q: &mut QuantizedMlp) -> Result<(), QuantError> {
        self.flush_pending(q)?;
        q.reassign(self.config.lambda)
    }

    /// Applies any pending basis update, then either restarts ECL from code 0
    /// (`refresh_priors`) or assigns codes in one pass under the current
    /// priors.
    pub fn reassign_frozen(&mut self, q: &mut QuantizedMlp, refresh_priors: bool) -> Result<(), QuantError> {
        self.flush_pending(q)?;
        if refresh_priors {
            q.restart(self.config.lambda)
        } else {
            q.reassign_frozen(self.config.lambda)
        }
    }
}

/// One straight-through training step; see [`SteTrainer::step`].
pub fn ste_train_step(
    q: &mut QuantizedMlp,
    batch: ArrayView2<f64>,
    labels: &[usize],
    trainer: &mut SteTrainer,
) -> Result<f64, QuantError> {
    trainer.step(q, batch, labels)
}
