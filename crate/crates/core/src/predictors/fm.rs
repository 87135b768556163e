//! Factorization-machine interaction term and the DeepFM backbone.

use rand::Rng;

use super::tower::{Tower, TowerCache};
use crate::error::Result;
use crate::numerics::{Linear, Module, ParamSink, Tensor2};

/// `Σ_{i<j} ⟨e_i, e_j⟩` for one row of `fields` concatenated `dim`-vectors,
/// via `½ Σ_f [(Σ_i e_if)² − Σ_i e_if²]`.
pub fn fm_second_order(row: &[f64], fields: usize, dim: usize) -> f64 {
    let mut total = 0.0;
    for f in 0..dim {
        let mut s = 0.0;
        let mut sq = 0.0;
        for i in 0..fields {
            let v = row[i * dim + f];
            s += v;
            sq += v * v;
        }
        total += s * s - sq;
    }
    0.5 * total
}

/// Gradient of [`fm_second_order`] scaled by `upstream`, added into `out`.
pub fn fm_second_order_backward(row: &[f64], fields: usize, dim: usize, upstream: f64, out: &mut [f64]) {
    for f in 0..dim {
        let s: f64 = (0..fields).map(|i| row[i * dim + f]).sum();
        for i in 0..fields {
            out[i * dim + f] += upstream * (s - row[i * dim + f]);
        }
    }
}

/// `logit = linear(x) + FM(x) + head(tower(x))`.
///
/// The first-order term is a learned linear function of the scaled field
/// embeddings, so the model owns no per-ID weights outside the tables.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepFm {
    pub linear: Linear,
    pub tower: Tower,
    pub head: Linear,
    pub fields: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct DeepFmCache {
    tower: TowerCache,
    hidden: Tensor2,
}

impl DeepFm {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, fields: usize, dim: usize, hidden: &[usize]) -> Self {
        let width = fields * dim;
        let linear = Linear::new(rng, width, 1);
        let tower = Tower::new(rng, width, hidden);
        let head = Linear::new(rng, tower.output_width(), 1);
        Self {
            linear,
            tower,
            head,
            fields,
            dim,
        }
    }

    pub fn logits(&self, x: &Tensor2) -> Result<(Vec<f64>, DeepFmCache)> {
        let lin = self.linear.forward(x)?;
        let (hidden, tower) = self.tower.forward(x)?;
        let deep = self.head.forward(&hidden)?;
        let logits = (0..x.rows())
            .map(|r| lin.get(r, 0) + fm_second_order(x.row(r), self.fields, self.dim) + deep.get(r, 0))
            .collect();
        Ok((logits, DeepFmCache { tower, hidden }))
    }

    pub fn backward(&mut self, x: &Tensor2, cache: &DeepFmCache, d_logit: &Tensor2) -> Result<Tensor2> {
        let mut dx = self.linear.backward(x, d_logit)?;
        let dh = self.head.backward(&cache.hidden, d_logit)?;
        dx.add_assign(&self.tower.backward(&cache.tower, &dh)?)?;
        for r in 0..x.rows() {
            fm_second_order_backward(x.row(r), self.fields, self.dim, d_logit.get(r, 0), dx.row_mut(r));
        }
        Ok(dx)
    }
}

impl Module for DeepFm {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.linear.visit_params(&format!("{prefix}.linear"), sink);
        self.tower.visit_params(&format!("{prefix}.tower"), sink);
        self.head.visit_params(&format!("{prefix}.head"), sink);
    }
}
