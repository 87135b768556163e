//! Affine maps and pointwise activations with their backward passes.

use rand::Rng;

use super::{init::xavier_uniform, Module, Param, ParamSink, Tensor2};
use crate::error::{dim_err, Error, Result};

/// `y = x·w + b`, bias broadcast over rows.
pub fn affine_forward(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    if x.cols() != w.rows() {
        return Err(dim_err("affine_forward", w.rows(), x.cols()));
    }
    if b.len() != w.cols() {
        return Err(dim_err("affine_forward bias", w.cols(), b.len()));
    }
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (v, &bb) in y.row_mut(r).iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(y)
}

/// Gradients of [`affine_forward`]: `(dx, dw, db)`.
pub fn affine_backward(x: &Tensor2, w: &Tensor2, dy: &Tensor2) -> Result<(Tensor2, Tensor2, Tensor2)> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(dim_err(
            "affine_backward",
            format!("({}, {})", x.rows(), w.cols()),
            format!("{:?}", dy.shape()),
        ));
    }
    let dx = dy.matmul_t(w)?;
    let dw = x.t_matmul(dy)?;
    let db = dy.sum_rows();
    Ok((dx, dw, db))
}

/// A fully connected layer; weight is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::new(xavier_uniform(rng, inputs, outputs)),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        affine_forward(x, &self.weight.value, self.bias.value.as_slice())
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor2, dy: &Tensor2) -> Result<Tensor2> {
        let (dx, dw, db) = affine_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.len() + self.bias.value.len()
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        sink.push((format!("{prefix}.weight"), &mut self.weight));
        sink.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// Backward of ReLU given the pre-activation input.
pub fn relu_backward(pre: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = dy.clone();
    for (d, &p) in dx.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Numerically stable logistic function.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax. Rejects non-finite input.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Row-wise softmax over a batch.
pub fn softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    if !x.all_finite() {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        softmax_into(x.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Backward of row-wise softmax: `dz = s ⊙ (ds − ⟨ds, s⟩)`.
pub fn softmax_rows_backward(s: &Tensor2, ds: &Tensor2) -> Tensor2 {
    let mut dz = Tensor2::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        let sr = s.row(r);
        let dr = ds.row(r);
        let dot: f64 = sr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for ((o, &si), &di) in dz.row_mut(r).iter_mut().zip(sr).zip(dr) {
            *o = si * (di - dot);
        }
    }
    dz
}
