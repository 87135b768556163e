//! Bias-corrected Adam and the trainable [`Param`] wrapper.

use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{dim_err, Result};

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

/// Per-tensor Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor2,
    pub v: Tensor2,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: Tensor2::zeros(rows, cols),
            v: Tensor2::zeros(rows, cols),
            t: 0,
            config,
        }
    }

    pub fn for_param(param: &Tensor2, config: AdamConfig) -> Self {
        Self::new(param.rows(), param.cols(), config)
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor2, grad: &Tensor2, state: &mut AdamState) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&state.m) || !param.same_shape(&state.v) {
        return Err(dim_err(
            "adam_step",
            format!("{:?}", param.shape()),
            format!("grad {:?}, moments {:?}", grad.shape(), state.m.shape()),
        ));
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let p = param.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (((p, &g), m), v) in p.iter_mut().zip(grad.as_slice()).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// A trainable tensor with its gradient accumulator and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam: AdamState,
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2::zeros(r, c),
            adam: AdamState::new(r, c, AdamConfig::default()),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Tensor2::zeros(rows, cols))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step(&mut self) -> Result<()> {
        adam_step(&mut self.value, &self.grad, &mut self.adam)
    }

    pub fn set_adam_config(&mut self, config: AdamConfig) {
        self.adam.config = config;
    }
}
