//! Baselines with a fixed field subset shared by every instance.

use rand::seq::index::sample;
use rand::Rng;

use super::topk::scale_slots;
use super::{Inference, LossBreakdown};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{Module, ParamSink};
use crate::predictors::{bce_mean, bce_mean_grad, Backbone, Predictor, PredictorConfig};

/// Embeds the fields in `fields` (ascending) and scales each by `weight`.
///
/// All fields with weight 1 is the no-selection baseline; a random half
/// with weight `1/k` is what early selection reduces to under uniform scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedFieldModel {
    pub embeddings: EmbeddingSet,
    pub predictor: Predictor,
    pub fields: Vec<usize>,
    pub weight: f64,
}

impl FixedFieldModel {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        vocab_sizes: &[usize],
        dim: usize,
        backbone: Backbone,
        hidden_dims: &[usize],
        n_cross_layers: usize,
        mut fields: Vec<usize>,
        weight: f64,
    ) -> Result<Self> {
        fields.sort_unstable();
        fields.dedup();
        if fields.is_empty() || fields.iter().any(|&f| f >= vocab_sizes.len()) {
            return Err(Error::Config(format!(
                "fixed field subset must be non-empty and below {}",
                vocab_sizes.len()
            )));
        }
        let embeddings = EmbeddingSet::new(rng, vocab_sizes, dim);
        let predictor = Predictor::new(
            rng,
            PredictorConfig {
                variant: backbone,
                input_fields: fields.len(),
                emb_dim: dim,
                hidden_dims: hidden_dims.to_vec(),
                n_cross_layers,
            },
        )?;
        Ok(Self {
            embeddings,
            predictor,
            fields,
            weight,
        })
    }

    /// A uniformly random `k`-subset drawn from `rng`.
    pub fn random_subset<R: Rng + ?Sized>(rng: &mut R, n_fields: usize, k: usize) -> Vec<usize> {
        let mut v = sample(rng, n_fields, k).into_vec();
        v.sort_unstable();
        v
    }

    fn selections(&self, n: usize) -> Vec<Vec<usize>> {
        vec![self.fields.clone(); n]
    }

    fn weights(&self, n: usize) -> Vec<Vec<f64>> {
        vec![vec![self.weight; self.fields.len()]; n]
    }

    pub fn train_step(&mut self, batch: &[&[u32]], labels: &[u8]) -> Result<LossBreakdown> {
        let dim = self.embeddings.dim();
        let sels = self.selections(batch.len());
        let raw = self.embeddings.embed_selected_batch(batch, &sels)?;
        let x = scale_slots(&raw, &self.weights(batch.len()), dim);
        let (probs, cache) = self.predictor.forward(&x)?;
        let loss = bce_mean(&probs, labels)?;
        let dx = self.predictor.backward(&cache, &bce_mean_grad(&probs, labels)?)?;
        let d_raw = dx.map(|v| v * self.weight);
        self.embeddings.backward_selected(batch, &sels, &d_raw)?;
        Ok(LossBreakdown::new(0.0, loss, 0.0, 0.0))
    }

    pub fn infer(&self, batch: &[&[u32]]) -> Result<Inference> {
        let dim = self.embeddings.dim();
        let raw = self.embeddings.embed_selected_batch(batch, &self.selections(batch.len()))?;
        let x = scale_slots(&raw, &self.weights(batch.len()), dim);
        Ok(Inference {
            p_main: self.predictor.predict(&x)?,
            p_aux: None,
            selections: None,
            embedding_gap: None,
        })
    }
}

impl Module for FixedFieldModel {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.embeddings.visit_params(&format!("{prefix}embeddings"), sink);
        self.predictor.visit_params(&format!("{prefix}predictor"), sink);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_module_gradients, jitter_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subset_lookups_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = [3, 4, 2, 5];
        let fields = FixedFieldModel::random_subset(&mut rng, 4, 2);
        assert_eq!(fields.len(), 2);
        let mut m = FixedFieldModel::new(&mut rng, &vocab, 3, Backbone::Mlp, &[4], 1, fields, 0.5).unwrap();
        let xs: Vec<Vec<u32>> = (0..5).map(|i| vec![i % 3, i % 4, i % 2, i % 5]).collect();
        let ys = vec![1, 0, 1, 1, 0];
        let b: Vec<&[u32]> = xs.iter().map(Vec::as_slice).collect();
        jitter_params(&mut m, 5, 0.05);
        m.infer(&b).unwrap();
        assert_eq!(m.embeddings.total_lookups(), 10);
        let err = check_module_gradients(&mut m, |m| m.train_step(&b, &ys).unwrap().total, 1e-6);
        assert!(err < 1e-3);
    }

    #[test]
    fn rejects_bad_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FixedFieldModel::new(&mut rng, &[2, 2], 2, Backbone::Mlp, &[2], 1, vec![], 1.0).is_err());
        assert!(FixedFieldModel::new(&mut rng, &[2, 2], 2, Backbone::Mlp, &[2], 1, vec![2], 1.0).is_err());
    }
}
