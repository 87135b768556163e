//! A trained model of any supported method behind one interface.

use rand::Rng;

use super::config::{Method, TrainConfig};
use crate::embedding::{full_param_count, ActivationLedger, EmbeddingSet};
use crate::error::Result;
use crate::numerics::{AdamConfig, BatchNormMode, BufferSink, Module, ParamSink};
use crate::selection::{
    AdafsModel, FixedFieldModel, Inference, LossBreakdown, LossSwitches, ModelPair, PairConfig, SelectionResult,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Fixed(FixedFieldModel),
    Adafs(AdafsModel),
    Aefs(ModelPair),
}

impl Model {
    /// Fresh parameters for `config.method` over fields of the given
    /// vocabulary sizes.
    pub fn build<R: Rng + ?Sized>(rng: &mut R, config: &TrainConfig, vocab_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let n = vocab_sizes.len();
        let k = config.k(n)?;
        let mut model = match config.method {
            Method::None => Model::Fixed(FixedFieldModel::new(
                rng,
                vocab_sizes,
                config.d1,
                config.backbone_main,
                &config.hidden_dims,
                config.n_cross_layers,
                (0..n).collect(),
                1.0,
            )?),
            Method::RandomHalf => {
                let fields = FixedFieldModel::random_subset(rng, n, k);
                Model::Fixed(FixedFieldModel::new(
                    rng,
                    vocab_sizes,
                    config.d1,
                    config.backbone_main,
                    &config.hidden_dims,
                    config.n_cross_layers,
                    fields,
                    1.0 / k as f64,
                )?)
            }
            Method::Adafs => Model::Adafs(AdafsModel::new(
                rng,
                vocab_sizes,
                config.d1,
                config.backbone_main,
                &config.hidden_dims,
                config.n_cross_layers,
                config.mode,
                k,
                config.enable_topk_reweight,
            )?),
            Method::Aefs => Model::Aefs(ModelPair::new(
                rng,
                PairConfig {
                    vocab_sizes: vocab_sizes.to_vec(),
                    d1: config.d1,
                    d2: config.d2,
                    k,
                    main_backbone: config.backbone_main,
                    aux_backbone: config.backbone_aux,
                    hidden_dims: config.hidden_dims.clone(),
                    n_cross_layers: config.n_cross_layers,
                    topk_reweight: config.enable_topk_reweight,
                },
            )?),
        };
        model.set_adam_config(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(model)
    }

    pub fn set_mode(&mut self, mode: BatchNormMode) {
        match self {
            Model::Fixed(_) => {}
            Model::Adafs(m) => m.set_mode(mode),
            Model::Aefs(m) => m.set_mode(mode),
        }
    }

    pub fn train_step(&mut self, batch: &[&[u32]], labels: &[u8], switches: LossSwitches) -> Result<LossBreakdown> {
        match self {
            Model::Fixed(m) => m.train_step(batch, labels),
            Model::Adafs(m) => m.train_step(batch, labels),
            Model::Aefs(m) => m.train_step(batch, labels, switches),
        }
    }

    pub fn infer(&self, batch: &[&[u32]]) -> Result<Inference> {
        match self {
            Model::Fixed(m) => m.infer(batch),
            Model::Adafs(m) => m.infer(batch),
            Model::Aefs(m) => m.infer(batch),
        }
    }

    /// Embedding set feeding the final prediction.
    pub fn main_embeddings(&self) -> &EmbeddingSet {
        match self {
            Model::Fixed(m) => &m.embeddings,
            Model::Adafs(m) => &m.embeddings,
            Model::Aefs(m) => &m.main_embeddings,
        }
    }

    pub fn aux_embeddings(&self) -> Option<&EmbeddingSet> {
        match self {
            Model::Aefs(m) => Some(&m.aux_embeddings),
            _ => None,
        }
    }

    pub fn reset_lookup_counts(&self) {
        self.main_embeddings().reset_lookup_counts();
        if let Some(a) = self.aux_embeddings() {
            a.reset_lookup_counts();
        }
    }

    /// Fields whose main-model tables an instance touches: the per-instance
    /// selection for early selection, every field for late selection and
    /// the fixed subset otherwise.
    pub fn record_activation(
        &self,
        ledger: &mut ActivationLedger,
        batch_len: usize,
        selections: Option<&[SelectionResult]>,
    ) -> Result<()> {
        let main = self.main_embeddings();
        match (self, selections) {
            (Model::Aefs(m), Some(sels)) => {
                let s: Vec<&[usize]> = sels.iter().map(|s| s.indices.as_slice()).collect();
                ledger.record_batch_activation(&s, main, Some(&m.aux_embeddings))
            }
            (Model::Fixed(m), _) => {
                let s = vec![m.fields.as_slice(); batch_len];
                ledger.record_batch_activation(&s, main, None)
            }
            _ => {
                let all: Vec<usize> = (0..main.n_fields()).collect();
                let s = vec![all.as_slice(); batch_len];
                ledger.record_batch_activation(&s, main, None)
            }
        }
    }

    /// Main plus auxiliary embedding parameters.
    pub fn embedding_param_count(&self) -> u64 {
        let main = self.main_embeddings();
        let aux = self
            .aux_embeddings()
            .map_or(0, |a| full_param_count(&a.vocab_sizes(), a.dim()));
        full_param_count(&main.vocab_sizes(), main.dim()) + aux
    }
}

impl Module for Model {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        match self {
            Model::Fixed(m) => m.visit_params(prefix, sink),
            Model::Adafs(m) => m.visit_params(prefix, sink),
            Model::Aefs(m) => m.visit_params(prefix, sink),
        }
    }

    fn visit_buffers<'a>(&'a mut self, prefix: &str, sink: &mut BufferSink<'a>) {
        match self {
            Model::Fixed(m) => m.visit_buffers(prefix, sink),
            Model::Adafs(m) => m.visit_buffers(prefix, sink),
            Model::Aefs(m) => m.visit_buffers(prefix, sink),
        }
    }
}
