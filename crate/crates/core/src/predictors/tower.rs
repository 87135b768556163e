//! ReLU feed-forward stack shared by all backbones.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{relu, relu_backward, Linear, Module, ParamSink, Tensor2};

#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub layers: Vec<Linear>,
}

/// Inputs and pre-activations of every layer.
#[derive(Clone, Debug)]
pub struct TowerCache {
    inputs: Vec<Tensor2>,
    pre: Vec<Tensor2>,
}

impl Tower {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = inputs;
        for &h in hidden {
            layers.push(Linear::new(rng, width, h));
            width = h;
        }
        Self { layers }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    pub fn forward(&self, x: &Tensor2) -> Result<(Tensor2, TowerCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.forward(&h)?;
            let a = relu(&z);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h, TowerCache { inputs, pre }))
    }

    pub fn backward(&mut self, cache: &TowerCache, d_out: &Tensor2) -> Result<Tensor2> {
        let mut g = d_out.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let dz = relu_backward(&cache.pre[i], &g);
            g = layer.backward(&cache.inputs[i], &dz)?;
        }
        Ok(g)
    }
}

impl Module for Tower {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.layer{i}"), sink);
        }
    }
}
