use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Tensor::zeros(shape.to_vec()),
            second_moment: Tensor::zeros(shape.to_vec()),
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    checked: bool,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape("adam_step", param.shape(), grad.shape()));
    }
    if state.first_moment.shape() != param.shape() {
        return Err(Error::shape("adam_step", param.shape(), state.first_moment.shape()));
    }
    if checked && !grad.is_finite() {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.epsilon));
    let one = T::one();
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`], with one state per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub states: Vec<AdamState<T>>,
    pub checked: bool,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Adam {
            config,
            states: store.iter().map(|(_, p)| AdamState::new(p.value.shape())).collect(),
            checked: true,
        }
    }

    /// Updates only the listed parameters from their accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        if self.states.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameter store"));
        }
        for &id in ids {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            adam_step(&mut p.value, &p.grad, &mut self.states[id.index()], &self.config, self.checked)?;
        }
        Ok(())
    }
}
