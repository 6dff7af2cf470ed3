use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Moment buffers for one ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    fn ensure_buffers(&mut self, params: &[&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
            return Ok(());
        }
        if self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {} moment buffers for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for (buf, p) in self.m.iter().zip(params) {
            if buf.len() != p.len() {
                return Err(Error::shape("adam_step", format!("moment buffer {} vs parameter `{}` {:?}", buf.len(), p.name(), p.shape())));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. Clears every gradient afterwards.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad().is_none()) {
        return Err(Error::MissingGrad(p.name().to_string()));
    }
    state.ensure_buffers(params)?;
    state.step += 1;
    let c = state.config;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let eps = T::lit(c.epsilon);
    let lr = T::lit(c.lr);
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad().expect("checked above").to_vec();
        let values = p.values_mut();
        for j in 0..values.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.clear_grad();
    }
    Ok(())
}
