//! Field-importance controller: batch norm, one affine map, softmax.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::numerics::{
    softmax_rows, softmax_rows_backward, BatchNorm, BatchNormCache, BatchNormMode, BufferSink, Linear, Module,
    ParamSink, Tensor2,
};

/// Maps a flattened `N·d` embedding row to `N` positive scores summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub norm: BatchNorm,
    pub fc: Linear,
    pub fields: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct ControllerCache {
    norm: BatchNormCache,
    normed: Tensor2,
    scores: Tensor2,
}

impl Controller {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, fields: usize, dim: usize) -> Self {
        Self {
            norm: BatchNorm::new(fields * dim),
            fc: Linear::new(rng, fields * dim, fields),
            fields,
            dim,
        }
    }

    pub fn set_mode(&mut self, mode: BatchNormMode) {
        self.norm.mode = mode;
    }

    fn check(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.fields * self.dim {
            return Err(dim_err("controller", self.fields * self.dim, x.cols()));
        }
        Ok(())
    }

    /// Scores in the current batch-norm mode; training mode updates running
    /// statistics and needs at least two rows.
    pub fn forward(&mut self, x: &Tensor2) -> Result<(Tensor2, ControllerCache)> {
        self.check(x)?;
        let (normed, norm) = self.norm.forward(x)?;
        let scores = softmax_rows(&self.fc.forward(&normed)?)?;
        Ok((
            scores.clone(),
            ControllerCache {
                norm,
                normed,
                scores,
            },
        ))
    }

    /// Scores using running statistics; never mutates state.
    pub fn scores_inference(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check(x)?;
        let normed = self.norm.forward_inference(x)?;
        softmax_rows(&self.fc.forward(&normed)?)
    }

    /// Takes `dL/dS` and returns `dL/dx`.
    pub fn backward(&mut self, cache: &ControllerCache, d_scores: &Tensor2) -> Result<Tensor2> {
        let dz = softmax_rows_backward(&cache.scores, d_scores);
        let dn = self.fc.backward(&cache.normed, &dz)?;
        self.norm.backward(&cache.norm, &dn)
    }
}

impl Module for Controller {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.norm.visit_params(&format!("{prefix}.norm"), sink);
        self.fc.visit_params(&format!("{prefix}.fc"), sink);
    }

    fn visit_buffers<'a>(&'a mut self, prefix: &str, sink: &mut BufferSink<'a>) {
        self.norm.visit_buffers(&format!("{prefix}.norm"), sink);
    }
}
