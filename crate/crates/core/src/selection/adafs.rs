//! Late selection: every field is embedded, then scaled (soft) or masked
//! and reweighted (hard) by controller scores.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topk::{scale_slots, scale_slots_backward, select, selection_backward, SelectionResult};
use super::{Inference, LossBreakdown};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, BufferSink, Module, ParamSink, Tensor2};
use crate::predictors::{bce_mean, bce_mean_grad, Backbone, Controller, ControllerCache, Predictor, PredictorCache, PredictorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Soft,
    Hard,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Soft => "soft",
            SelectionMode::Hard => "hard",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soft" => Ok(SelectionMode::Soft),
            "hard" => Ok(SelectionMode::Hard),
            other => Err(Error::Config(format!("unknown selection mode `{other}` (expected soft or hard)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LateTrace {
    embedded: Tensor2,
    scores: Tensor2,
    /// Per-row weight of every field; zero for dropped fields in hard mode.
    field_weights: Vec<Vec<f64>>,
    selections: Option<Vec<SelectionResult>>,
    probs: Vec<f64>,
    controller_cache: Option<ControllerCache>,
    predictor_cache: PredictorCache,
}

/// Scales the embedded fields by controller scores and predicts.
pub(crate) fn late_forward(
    embedded: Tensor2,
    scores: Tensor2,
    controller_cache: Option<ControllerCache>,
    predictor: &Predictor,
    mode: SelectionMode,
    k: usize,
    reweight: bool,
) -> Result<LateTrace> {
    let n = scores.cols();
    let dim = embedded.cols() / n.max(1);
    let (field_weights, selections): (Vec<Vec<f64>>, _) = match mode {
        SelectionMode::Soft => ((0..scores.rows()).map(|r| scores.row(r).to_vec()).collect(), None),
        SelectionMode::Hard => {
            let sels = (0..scores.rows())
                .map(|r| select(scores.row(r), k, reweight))
                .collect::<Result<Vec<_>>>()?;
            let weights = sels
                .iter()
                .map(|s| {
                    let mut w = vec![0.0; n];
                    for (&i, &v) in s.indices.iter().zip(&s.weights) {
                        w[i] = v;
                    }
                    w
                })
                .collect();
            (weights, Some(sels))
        }
    };
    let scaled = scale_slots(&embedded, &field_weights, dim);
    let (probs, predictor_cache) = predictor.forward(&scaled)?;
    Ok(LateTrace {
        embedded,
        scores,
        field_weights,
        selections,
        probs,
        controller_cache,
        predictor_cache,
    })
}

/// BCE backward through predictor, scaling and controller; returns
/// `dL/dE` over all fields.
pub(crate) fn late_backward(
    trace: &LateTrace,
    labels: &[u8],
    controller: &mut Controller,
    predictor: &mut Predictor,
    reweight: bool,
) -> Result<Tensor2> {
    let n = trace.scores.cols();
    let dim = trace.embedded.cols() / n;
    let dp = bce_mean_grad(&trace.probs, labels)?;
    let d_scaled = predictor.backward(&trace.predictor_cache, &dp)?;
    let (mut d_embedded, d_field_w) = scale_slots_backward(&trace.embedded, &trace.field_weights, dim, &d_scaled);
    let d_scores = match &trace.selections {
        None => Tensor2::from_vec(d_field_w.len(), n, d_field_w.concat())?,
        Some(sels) => {
            let mut ds = Tensor2::zeros(sels.len(), n);
            for (b, sel) in sels.iter().enumerate() {
                let dw: Vec<f64> = sel.indices.iter().map(|&i| d_field_w[b][i]).collect();
                ds.row_mut(b)
                    .copy_from_slice(&selection_backward(n, sel, &dw, reweight, trace.scores.row(b)));
            }
            ds
        }
    };
    let cache = trace
        .controller_cache
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("backward needs a training-mode trace".into()))?;
    d_embedded.add_assign(&controller.backward(cache, &d_scores)?)?;
    Ok(d_embedded)
}

/// Runs one soft- or hard-mode training step on borrowed components.
pub(crate) fn late_train_step(
    embeddings: &mut EmbeddingSet,
    controller: &mut Controller,
    predictor: &mut Predictor,
    batch: &[&[u32]],
    labels: &[u8],
    mode: SelectionMode,
    k: usize,
    reweight: bool,
) -> Result<f64> {
    let embedded = embeddings.embed_batch(batch)?;
    let (scores, cache) = controller.forward(&embedded)?;
    let trace = late_forward(embedded, scores, Some(cache), predictor, mode, k, reweight)?;
    let loss = bce_mean(&trace.probs, labels)?;
    let d_embedded = late_backward(&trace, labels, controller, predictor, reweight)?;
    embeddings.backward_batch(batch, &d_embedded)?;
    Ok(loss)
}

/// Single model with late feature selection over all `N` fields.
#[derive(Clone, Debug, PartialEq)]
pub struct AdafsModel {
    pub embeddings: EmbeddingSet,
    pub controller: Controller,
    pub predictor: Predictor,
    pub mode: SelectionMode,
    pub k: usize,
    pub topk_reweight: bool,
}

impl AdafsModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        vocab_sizes: &[usize],
        dim: usize,
        backbone: Backbone,
        hidden_dims: &[usize],
        n_cross_layers: usize,
        mode: SelectionMode,
        k: usize,
        topk_reweight: bool,
    ) -> Result<Self> {
        let n = vocab_sizes.len();
        if k == 0 || k > n {
            return Err(Error::Config(format!("k must lie in 1..={n}, got {k}")));
        }
        let embeddings = EmbeddingSet::new(rng, vocab_sizes, dim);
        let controller = Controller::new(rng, n, dim);
        let predictor = Predictor::new(
            rng,
            PredictorConfig {
                variant: backbone,
                input_fields: n,
                emb_dim: dim,
                hidden_dims: hidden_dims.to_vec(),
                n_cross_layers,
            },
        )?;
        Ok(Self {
            embeddings,
            controller,
            predictor,
            mode,
            k,
            topk_reweight,
        })
    }

    pub fn set_mode(&mut self, mode: BatchNormMode) {
        self.controller.set_mode(mode);
    }

    pub fn train_step(&mut self, batch: &[&[u32]], labels: &[u8]) -> Result<LossBreakdown> {
        self.train_step_in(batch, labels, self.mode)
    }

    /// Training step in an explicit selection mode (soft-mode warm-up).
    pub fn train_step_in(&mut self, batch: &[&[u32]], labels: &[u8], mode: SelectionMode) -> Result<LossBreakdown> {
        let loss = late_train_step(
            &mut self.embeddings,
            &mut self.controller,
            &mut self.predictor,
            batch,
            labels,
            mode,
            self.k,
            self.topk_reweight,
        )?;
        Ok(LossBreakdown::new(0.0, loss, 0.0, 0.0))
    }

    pub fn infer(&self, batch: &[&[u32]]) -> Result<Inference> {
        let embedded = self.embeddings.embed_batch(batch)?;
        let scores = self.controller.scores_inference(&embedded)?;
        let trace = late_forward(embedded, scores, None, &self.predictor, self.mode, self.k, self.topk_reweight)?;
        Ok(Inference {
            p_main: trace.probs,
            p_aux: None,
            selections: trace.selections,
            embedding_gap: None,
        })
    }
}

impl Module for AdafsModel {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.embeddings.visit_params(&format!("{prefix}embeddings"), sink);
        self.controller.visit_params(&format!("{prefix}controller"), sink);
        self.predictor.visit_params(&format!("{prefix}predictor"), sink);
    }

    fn visit_buffers<'a>(&'a mut self, prefix: &str, sink: &mut BufferSink<'a>) {
        self.controller.visit_buffers(&format!("{prefix}controller"), sink);
    }
}
