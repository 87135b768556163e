//! Early selection: an auxiliary model picks fields before the main model
//! embeds them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adafs::{late_train_step, SelectionMode};
use super::losses::slots_as_rows;
use super::topk::{scale_slots, scale_slots_backward, select, selection_backward, SelectionResult};
use super::{Inference, LossBreakdown, LossSwitches};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, BufferSink, Linear, Module, ParamSink, Tensor2};
use crate::predictors::{
    bce_mean, bce_mean_grad, Backbone, Controller, ControllerCache, Predictor, PredictorCache, PredictorConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub vocab_sizes: Vec<usize>,
    pub d1: usize,
    pub d2: usize,
    pub k: usize,
    pub main_backbone: Backbone,
    pub aux_backbone: Backbone,
    pub hidden_dims: Vec<usize>,
    pub n_cross_layers: usize,
    pub topk_reweight: bool,
}

impl PairConfig {
    pub fn n_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_fields();
        if n == 0 {
            return Err(Error::Config("model needs at least one field".into()));
        }
        if self.k == 0 || self.k > n {
            return Err(Error::Config(format!("k must lie in 1..={n}, got {}", self.k)));
        }
        if self.d2 == 0 || self.d2 > self.d1 {
            return Err(Error::Config(format!(
                "need 0 < d2 <= d1, got d1={} d2={}",
                self.d1, self.d2
            )));
        }
        Ok(())
    }

    fn predictor(&self, variant: Backbone, fields: usize, dim: usize) -> PredictorConfig {
        PredictorConfig {
            variant,
            input_fields: fields,
            emb_dim: dim,
            hidden_dims: self.hidden_dims.clone(),
            n_cross_layers: self.n_cross_layers,
        }
    }
}

/// Auxiliary model (embeddings at `d2`, controller, predictor over `k·d2`,
/// alignment map `d2 → d1`) and main model (embeddings at `d1`, predictor
/// over `k·d1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair {
    pub config: PairConfig,
    pub aux_embeddings: EmbeddingSet,
    pub controller: Controller,
    pub aux_predictor: Predictor,
    pub align: Linear,
    pub main_embeddings: EmbeddingSet,
    pub main_predictor: Predictor,
}

/// Per-batch values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `B × N` importance scores.
    pub scores: Tensor2,
    pub selections: Vec<SelectionResult>,
    /// `B × (N·d2)` auxiliary embeddings of all fields.
    pub aux_all: Tensor2,
    /// `B × (k·d2)` selected, scaled auxiliary embeddings.
    pub aux_selected: Tensor2,
    /// `B × (k·d1)` main embeddings before scaling.
    pub main_raw: Tensor2,
    /// `B × (k·d1)` scaled main embeddings.
    pub main_selected: Tensor2,
    /// `(B·k) × d1` alignment-map output.
    pub aligned: Tensor2,
    pub p_aux: Vec<f64>,
    pub p_main: Vec<f64>,
    controller_cache: Option<ControllerCache>,
    aux_cache: PredictorCache,
    main_cache: PredictorCache,
}

impl ForwardTrace {
    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.selections.iter().map(|s| s.weights.clone()).collect()
    }

    pub fn indices(&self) -> Vec<Vec<usize>> {
        self.selections.iter().map(|s| s.indices.clone()).collect()
    }

    /// Per-instance mean of `(fc(E_a_sel) − E_m_sel)²` over `k·d1` components.
    pub fn embedding_gaps(&self) -> Vec<f64> {
        let b = self.main_selected.rows();
        let width = self.main_selected.cols();
        (0..b)
            .map(|r| {
                let a = &self.aligned.as_slice()[r * width..(r + 1) * width];
                let m = self.main_selected.row(r);
                a.iter().zip(m).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / width as f64
            })
            .collect()
    }
}

impl ModelPair {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: PairConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_fields();
        let aux_embeddings = EmbeddingSet::new(rng, &config.vocab_sizes, config.d2);
        let controller = Controller::new(rng, n, config.d2);
        let aux_predictor = Predictor::new(rng, config.predictor(config.aux_backbone, config.k, config.d2))?;
        let align = Linear::new(rng, config.d2, config.d1);
        let main_embeddings = EmbeddingSet::new(rng, &config.vocab_sizes, config.d1);
        let main_predictor = Predictor::new(rng, config.predictor(config.main_backbone, config.k, config.d1))?;
        Ok(Self {
            config,
            aux_embeddings,
            controller,
            aux_predictor,
            align,
            main_embeddings,
            main_predictor,
        })
    }

    pub fn set_mode(&mut self, mode: BatchNormMode) {
        self.controller.set_mode(mode);
    }

    /// Forward with the controller in its current batch-norm mode; training
    /// mode updates running statistics.
    pub fn forward(&mut self, batch: &[&[u32]]) -> Result<ForwardTrace> {
        let aux_all = self.aux_embeddings.embed_batch(batch)?;
        let (scores, cache) = self.controller.forward(&aux_all)?;
        self.forward_from_scores(batch, aux_all, scores, Some(cache))
    }

    /// Forward with running batch-norm statistics; no state changes besides
    /// lookup counters.
    pub fn forward_inference(&self, batch: &[&[u32]]) -> Result<ForwardTrace> {
        let aux_all = self.aux_embeddings.embed_batch(batch)?;
        let scores = self.controller.scores_inference(&aux_all)?;
        self.forward_from_scores(batch, aux_all, scores, None)
    }

    fn forward_from_scores(
        &self,
        batch: &[&[u32]],
        aux_all: Tensor2,
        scores: Tensor2,
        controller_cache: Option<ControllerCache>,
    ) -> Result<ForwardTrace> {
        let (k, d1, d2) = (self.config.k, self.config.d1, self.config.d2);
        let selections = (0..scores.rows())
            .map(|r| select(scores.row(r), k, self.config.topk_reweight))
            .collect::<Result<Vec<_>>>()?;
        let indices: Vec<Vec<usize>> = selections.iter().map(|s| s.indices.clone()).collect();
        let weights: Vec<Vec<f64>> = selections.iter().map(|s| s.weights.clone()).collect();

        let aux_gathered = gather_slots(&aux_all, &indices, d2);
        let aux_selected = scale_slots(&aux_gathered, &weights, d2);
        let (p_aux, aux_cache) = self.aux_predictor.forward(&aux_selected)?;

        let main_raw = self.main_embeddings.embed_selected_batch(batch, &indices)?;
        let main_selected = scale_slots(&main_raw, &weights, d1);
        let (p_main, main_cache) = self.main_predictor.forward(&main_selected)?;

        let aligned = self.align.forward(&slots_as_rows(&aux_selected, d2)?)?;
        Ok(ForwardTrace {
            scores,
            selections,
            aux_all,
            aux_selected,
            main_raw,
            main_selected,
            aligned,
            p_aux,
            p_main,
            controller_cache,
            aux_cache,
            main_cache,
        })
    }

    fn losses(&self, trace: &ForwardTrace, labels: &[u8], switches: LossSwitches) -> Result<LossBreakdown> {
        let bce_aux = bce_mean(&trace.p_aux, labels)?;
        let bce_main = bce_mean(&trace.p_main, labels)?;
        let eal = if switches.eal {
            mean_sq_diff(trace.aligned.as_slice(), trace.main_selected.as_slice())
        } else {
            0.0
        };
        let pal = if switches.pal {
            mean_sq_diff(&trace.p_aux, &trace.p_main)
        } else {
            0.0
        };
        Ok(LossBreakdown::new(bce_aux, bce_main, eal, pal))
    }

    /// One training forward and backward pass. Gradients accumulate into
    /// every parameter; the caller zeroes and steps.
    pub fn train_step(&mut self, batch: &[&[u32]], labels: &[u8], switches: LossSwitches) -> Result<LossBreakdown> {
        let trace = self.forward(batch)?;
        let loss = self.losses(&trace, labels, switches)?;
        self.backward(batch, labels, &trace, switches)?;
        Ok(loss)
    }

    fn backward(&mut self, batch: &[&[u32]], labels: &[u8], trace: &ForwardTrace, switches: LossSwitches) -> Result<()> {
        let (n, d1, d2) = (self.config.n_fields(), self.config.d1, self.config.d2);
        let m = labels.len() as f64;

        let mut dp_aux = bce_mean_grad(&trace.p_aux, labels)?;
        let mut dp_main = bce_mean_grad(&trace.p_main, labels)?;
        if switches.pal {
            for ((ga, gm), (a, b)) in dp_aux.iter_mut().zip(&mut dp_main).zip(trace.p_aux.iter().zip(&trace.p_main)) {
                let g = 2.0 * (a - b) / m;
                *ga += g;
                *gm -= g;
            }
        }
        let mut d_aux_sel = self.aux_predictor.backward(&trace.aux_cache, &dp_aux)?;
        let mut d_main_sel = self.main_predictor.backward(&trace.main_cache, &dp_main)?;

        if switches.eal {
            let count = trace.main_selected.len() as f64;
            let d_aligned: Vec<f64> = trace
                .aligned
                .as_slice()
                .iter()
                .zip(trace.main_selected.as_slice())
                .map(|(a, b)| 2.0 * (a - b) / count)
                .collect();
            for (g, d) in d_main_sel.as_mut_slice().iter_mut().zip(&d_aligned) {
                *g -= d;
            }
            let d_aligned = Tensor2::from_vec(trace.aligned.rows(), d1, d_aligned)?;
            let d_rows = self.align.backward(&slots_as_rows(&trace.aux_selected, d2)?, &d_aligned)?;
            for (g, d) in d_aux_sel.as_mut_slice().iter_mut().zip(d_rows.as_slice()) {
                *g += d;
            }
        }

        let weights = trace.weights();
        let indices = trace.indices();
        let (d_main_raw, dw_main) = scale_slots_backward(&trace.main_raw, &weights, d1, &d_main_sel);
        let aux_gathered = gather_slots(&trace.aux_all, &indices, d2);
        let (d_aux_gathered, dw_aux) = scale_slots_backward(&aux_gathered, &weights, d2, &d_aux_sel);

        let mut d_scores = Tensor2::zeros(trace.scores.rows(), n);
        for (b, sel) in trace.selections.iter().enumerate() {
            let dw: Vec<f64> = dw_main[b].iter().zip(&dw_aux[b]).map(|(a, c)| a + c).collect();
            let ds = selection_backward(n, sel, &dw, self.config.topk_reweight, trace.scores.row(b));
            d_scores.row_mut(b).copy_from_slice(&ds);
        }
        let mut d_aux_all = scatter_slots(&d_aux_gathered, &indices, n, d2);
        let cache = trace
            .controller_cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward needs a training-mode trace".into()))?;
        d_aux_all.add_assign(&self.controller.backward(cache, &d_scores)?)?;

        self.aux_embeddings.backward_batch(batch, &d_aux_all)?;
        self.main_embeddings.backward_selected(batch, &indices, &d_main_raw)
    }

    /// A throwaway predictor over all `N·d2` auxiliary embeddings, used to
    /// pretrain the auxiliary model before any field is dropped.
    pub fn pretrain_head<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Predictor> {
        let cfg = self
            .config
            .predictor(self.config.aux_backbone, self.config.n_fields(), self.config.d2);
        Predictor::new(rng, cfg)
    }

    /// Auxiliary-only BCE step with soft scaling of all fields through `head`.
    pub fn pretrain_step(&mut self, head: &mut Predictor, batch: &[&[u32]], labels: &[u8]) -> Result<f64> {
        late_train_step(
            &mut self.aux_embeddings,
            &mut self.controller,
            head,
            batch,
            labels,
            SelectionMode::Soft,
            self.config.k,
            self.config.topk_reweight,
        )
    }

    /// Evaluation pass with frozen parameters.
    pub fn infer(&self, batch: &[&[u32]]) -> Result<Inference> {
        let trace = self.forward_inference(batch)?;
        let embedding_gap = trace.embedding_gaps();
        Ok(Inference {
            p_main: trace.p_main,
            p_aux: Some(trace.p_aux),
            selections: Some(trace.selections),
            embedding_gap: Some(embedding_gap),
        })
    }

    /// Inference-mode scores of the auxiliary model over all fields.
    pub fn scores_inference(&self, batch: &[&[u32]]) -> Result<Tensor2> {
        let aux_all = self.aux_embeddings.embed_batch(batch)?;
        self.controller.scores_inference(&aux_all)
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Copies each row's selected `d`-wide field blocks into consecutive slots.
pub(crate) fn gather_slots(all: &Tensor2, indices: &[Vec<usize>], dim: usize) -> Tensor2 {
    let k = indices.first().map_or(0, Vec::len);
    let mut out = Tensor2::zeros(all.rows(), k * dim);
    for (b, sel) in indices.iter().enumerate() {
        let src = all.row(b);
        let dst = out.row_mut(b);
        for (j, &f) in sel.iter().enumerate() {
            dst[j * dim..(j + 1) * dim].copy_from_slice(&src[f * dim..(f + 1) * dim]);
        }
    }
    out
}

/// Adjoint of [`gather_slots`].
pub(crate) fn scatter_slots(slots: &Tensor2, indices: &[Vec<usize>], n_fields: usize, dim: usize) -> Tensor2 {
    let mut out = Tensor2::zeros(slots.rows(), n_fields * dim);
    for (b, sel) in indices.iter().enumerate() {
        let src = slots.row(b);
        let dst = out.row_mut(b);
        for (j, &f) in sel.iter().enumerate() {
            for (o, s) in dst[f * dim..(f + 1) * dim].iter_mut().zip(&src[j * dim..(j + 1) * dim]) {
                *o += s;
            }
        }
    }
    out
}

impl Module for ModelPair {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.aux_embeddings.visit_params(&format!("{prefix}aux.embeddings"), sink);
        self.controller.visit_params(&format!("{prefix}aux.controller"), sink);
        self.aux_predictor.visit_params(&format!("{prefix}aux.predictor"), sink);
        self.align.visit_params(&format!("{prefix}aux.align"), sink);
        self.main_embeddings.visit_params(&format!("{prefix}main.embeddings"), sink);
        self.main_predictor.visit_params(&format!("{prefix}main.predictor"), sink);
    }

    fn visit_buffers<'a>(&'a mut self, prefix: &str, sink: &mut BufferSink<'a>) {
        self.controller.visit_buffers(&format!("{prefix}aux.controller"), sink);
    }
}
