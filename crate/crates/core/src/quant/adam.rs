use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QuantError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// ADAM with bias correction. Moments are kept per named parameter tensor and
/// each tensor counts its own steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    slots: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self, path: &str) -> u64 {
        self.slots.get(path).map_or(0, |s| s.step)
    }

    /// One ADAM step on `params` in place.
    pub fn update(&mut self, path: &str, params: &mut [f64], grads: &[f64]) -> Result<(), QuantError> {
        self.update_with_lr(path, params, grads, self.config.lr)
    }

    pub fn update_with_lr(&mut self, path: &str, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), QuantError> {
        if params.len() != grads.len() {
            return Err(QuantError::Shape(format!(
                "{path}: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(QuantError::NonFinite {
                path: path.to_string(),
                index,
            });
        }
        let slot = self.slots.entry(path.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        });
        if slot.m.len() != params.len() {
            return Err(QuantError::Shape(format!(
                "{path}: optimizer state holds {} entries, parameter has {}",
                slot.m.len(),
                params.len()
            )));
        }
        slot.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(slot.step as i32);
        let c2 = 1.0 - beta2.powi(slot.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut slot.m).zip(&mut slot.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Convenience wrapper matching the functional form `params' = adam(params, grads, state)`.
pub fn adam_update(path: &str, params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), QuantError> {
    state.update(path, params, grads)
}
