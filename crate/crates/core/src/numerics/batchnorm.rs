//! Per-feature batch normalization over a `batch × features` tensor.

use serde::{Deserialize, Serialize};

use super::{BufferSink, Module, Param, ParamSink, Tensor2};
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Training,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor2,
    pub running_var: Tensor2,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BatchNormMode,
}

pub type BatchNormState = BatchNorm;

/// Values saved by the forward pass for backward.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Tensor2,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Tensor2::filled(1, features, 1.0)),
            beta: Param::zeros(1, features),
            running_mean: Tensor2::zeros(1, features),
            running_var: Tensor2::filled(1, features, 1.0),
            momentum: 0.1,
            eps: 1e-5,
            mode: BatchNormMode::Training,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.cols()
    }

    fn check(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.features() {
            return Err(dim_err("batch_norm", self.features(), x.cols()));
        }
        Ok(())
    }

    /// Forward in the current mode. Training mode normalizes with batch
    /// statistics and updates the running estimates.
    pub fn forward(&mut self, x: &Tensor2) -> Result<(Tensor2, BatchNormCache)> {
        self.check(x)?;
        match self.mode {
            BatchNormMode::Inference => Ok(self.normalize_with_running(x)),
            BatchNormMode::Training => self.forward_train(x),
        }
    }

    /// Inference-mode forward; never touches state.
    pub fn forward_inference(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check(x)?;
        Ok(self.normalize_with_running(x).0)
    }

    fn normalize_with_running(&self, x: &Tensor2) -> (Tensor2, BatchNormCache) {
        let f = self.features();
        let inv_std: Vec<f64> = self
            .running_var
            .as_slice()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mean = self.running_mean.as_slice();
        let mut x_hat = Tensor2::zeros(x.rows(), f);
        for r in 0..x.rows() {
            for (c, (o, &v)) in x_hat.row_mut(r).iter_mut().zip(x.row(r)).enumerate() {
                *o = (v - mean[c]) * inv_std[c];
            }
        }
        let y = self.affine(&x_hat);
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_stats: false,
            },
        )
    }

    fn forward_train(&mut self, x: &Tensor2) -> Result<(Tensor2, BatchNormCache)> {
        let n = x.rows();
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm in training mode needs at least 2 rows, got {n}"
            )));
        }
        let f = self.features();
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut x_hat = Tensor2::zeros(n, f);
        for r in 0..n {
            for (c, (o, &v)) in x_hat.row_mut(r).iter_mut().zip(x.row(r)).enumerate() {
                *o = (v - mean[c]) * inv_std[c];
            }
        }

        // Running variance uses the unbiased estimate.
        let unbias = n as f64 / (n as f64 - 1.0);
        let mom = self.momentum;
        for (rm, m) in self.running_mean.as_mut_slice().iter_mut().zip(&mean) {
            *rm = (1.0 - mom) * *rm + mom * m;
        }
        for (rv, v) in self.running_var.as_mut_slice().iter_mut().zip(&var) {
            *rv = (1.0 - mom) * *rv + mom * v * unbias;
        }

        let y = self.affine(&x_hat);
        Ok((
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_stats: true,
            },
        ))
    }

    fn affine(&self, x_hat: &Tensor2) -> Tensor2 {
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        let mut y = x_hat.clone();
        for r in 0..y.rows() {
            for ((v, &gg), &bb) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gg + bb;
            }
        }
        y
    }

    /// Accumulates gamma/beta gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor2) -> Result<Tensor2> {
        if !dy.same_shape(&cache.x_hat) {
            return Err(dim_err(
                "batch_norm backward",
                format!("{:?}", cache.x_hat.shape()),
                format!("{:?}", dy.shape()),
            ));
        }
        let (n, f) = dy.shape();
        let g = self.gamma.value.as_slice().to_vec();
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..n {
            for c in 0..f {
                let d = dy.get(r, c);
                sum_dy[c] += d;
                sum_dy_xhat[c] += d * cache.x_hat.get(r, c);
            }
        }
        for (gg, s) in self.gamma.grad.as_mut_slice().iter_mut().zip(&sum_dy_xhat) {
            *gg += s;
        }
        for (bb, s) in self.beta.grad.as_mut_slice().iter_mut().zip(&sum_dy) {
            *bb += s;
        }

        let mut dx = Tensor2::zeros(n, f);
        let nf = n as f64;
        for r in 0..n {
            for c in 0..f {
                let dxhat = dy.get(r, c) * g[c];
                let v = if cache.batch_stats {
                    // Mean and variance depend on x through the batch.
                    let s1 = sum_dy[c] * g[c];
                    let s2 = sum_dy_xhat[c] * g[c];
                    cache.inv_std[c] / nf * (nf * dxhat - s1 - cache.x_hat.get(r, c) * s2)
                } else {
                    dxhat * cache.inv_std[c]
                };
                dx.set(r, c, v);
            }
        }
        Ok(dx)
    }
}

/// Functional form: forward through `state` in its current mode.
pub fn batch_norm(x: &Tensor2, state: &mut BatchNormState) -> Result<Tensor2> {
    state.forward(x).map(|(y, _)| y)
}

impl Module for BatchNorm {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        sink.push((format!("{prefix}.gamma"), &mut self.gamma));
        sink.push((format!("{prefix}.beta"), &mut self.beta));
    }

    fn visit_buffers<'a>(&'a mut self, prefix: &str, sink: &mut BufferSink<'a>) {
        sink.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        sink.push((format!("{prefix}.running_var"), &mut self.running_var));
    }
}
