//! Deep & Cross backbone.
//!
//! Cross layers apply `x_{l+1} = x_0 · (x_lᵀ w_l) + b_l + x_l`; the final
//! cross output is concatenated with the deep tower's output and mapped to
//! one logit.

use rand::Rng;

use super::tower::{Tower, TowerCache};
use crate::error::Result;
use crate::numerics::{xavier_uniform, Linear, Module, Param, ParamSink, Tensor2};

#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayer {
    /// `1 × D`
    pub w: Param,
    /// `1 × D`
    pub b: Param,
}

impl CrossLayer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, width: usize) -> Self {
        Self {
            w: Param::new(xavier_uniform(rng, 1, width)),
            b: Param::zeros(1, width),
        }
    }

    pub fn forward(&self, x0: &Tensor2, xl: &Tensor2) -> Tensor2 {
        let w = self.w.value.as_slice();
        let b = self.b.value.as_slice();
        let mut out = Tensor2::zeros(xl.rows(), xl.cols());
        for r in 0..xl.rows() {
            let s: f64 = xl.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
            for (((o, &a0), &al), &bb) in out.row_mut(r).iter_mut().zip(x0.row(r)).zip(xl.row(r)).zip(b) {
                *o = a0 * s + bb + al;
            }
        }
        out
    }

    /// Returns `dL/dx_l`; adds the `x_0` contribution into `dx0`.
    pub fn backward(&mut self, x0: &Tensor2, xl: &Tensor2, g: &Tensor2, dx0: &mut Tensor2) -> Tensor2 {
        let w = self.w.value.as_slice().to_vec();
        let mut dxl = g.clone();
        for r in 0..g.rows() {
            let gr = g.row(r);
            let s: f64 = xl.row(r).iter().zip(&w).map(|(a, b)| a * b).sum();
            let g_dot_x0: f64 = gr.iter().zip(x0.row(r)).map(|(a, b)| a * b).sum();
            for (d, &wi) in dxl.row_mut(r).iter_mut().zip(&w) {
                *d += g_dot_x0 * wi;
            }
            for (d, &gi) in dx0.row_mut(r).iter_mut().zip(gr) {
                *d += gi * s;
            }
            for (dw, &xi) in self.w.grad.as_mut_slice().iter_mut().zip(xl.row(r)) {
                *dw += g_dot_x0 * xi;
            }
            for (db, &gi) in self.b.grad.as_mut_slice().iter_mut().zip(gr) {
                *db += gi;
            }
        }
        dxl
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dcn {
    pub cross: Vec<CrossLayer>,
    pub tower: Tower,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct DcnCache {
    /// `xs[0]` is the input; `xs[l + 1]` the output of cross layer `l`.
    xs: Vec<Tensor2>,
    tower: TowerCache,
    joint: Tensor2,
}

impl Dcn {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, width: usize, hidden: &[usize], n_cross: usize) -> Self {
        let cross = (0..n_cross).map(|_| CrossLayer::new(rng, width)).collect();
        let tower = Tower::new(rng, width, hidden);
        let head = Linear::new(rng, width + tower.output_width(), 1);
        Self { cross, tower, head }
    }

    pub fn logits(&self, x: &Tensor2) -> Result<(Vec<f64>, DcnCache)> {
        let mut xs = vec![x.clone()];
        for layer in &self.cross {
            let next = layer.forward(x, xs.last().expect("non-empty"));
            xs.push(next);
        }
        let (hidden, tower) = self.tower.forward(x)?;
        let joint = Tensor2::hconcat(&[xs.last().expect("non-empty"), &hidden])?;
        let out = self.head.forward(&joint)?;
        Ok((out.into_vec(), DcnCache { xs, tower, joint }))
    }

    pub fn backward(&mut self, cache: &DcnCache, d_logit: &Tensor2) -> Result<Tensor2> {
        let width = cache.xs[0].cols();
        let d_joint = self.head.backward(&cache.joint, d_logit)?;
        let mut g = d_joint.column_block(0, width);
        let d_hidden = d_joint.column_block(width, d_joint.cols() - width);
        let mut dx0 = self.tower.backward(&cache.tower, &d_hidden)?;
        let x0 = &cache.xs[0];
        for (l, layer) in self.cross.iter_mut().enumerate().rev() {
            g = layer.backward(x0, &cache.xs[l], &g, &mut dx0);
        }
        // g now holds dL/dx_0 through the x_l chain
        dx0.add_assign(&g)?;
        Ok(dx0)
    }
}

impl Module for Dcn {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        for (i, c) in self.cross.iter_mut().enumerate() {
            sink.push((format!("{prefix}.cross{i}.w"), &mut c.w));
            sink.push((format!("{prefix}.cross{i}.b"), &mut c.b));
        }
        self.tower.visit_params(&format!("{prefix}.tower"), sink);
        self.head.visit_params(&format!("{prefix}.head"), sink);
    }
}
