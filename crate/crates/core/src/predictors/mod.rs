//! Prediction backbones (MLP, DeepFM, DCN), the selection controller and
//! the BCE loss. Every layer carries a hand-written backward pass.

mod controller;
mod dcn;
mod fm;
mod loss;
mod tower;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use controller::{Controller, ControllerCache};
pub use dcn::{CrossLayer, Dcn, DcnCache};
pub use fm::{fm_second_order, fm_second_order_backward, DeepFm, DeepFmCache};
pub use loss::{bce, bce_mean, bce_mean_grad, PROB_CLAMP};
pub use tower::{Tower, TowerCache};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{sigmoid, Linear, Module, ParamSink, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mlp,
    DeepFm,
    Dcn,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Mlp => "mlp",
            Backbone::DeepFm => "deepfm",
            Backbone::Dcn => "dcn",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Backbone::Mlp),
            "deepfm" => Ok(Backbone::DeepFm),
            "dcn" => Ok(Backbone::Dcn),
            other => Err(Error::Config(format!("unknown backbone `{other}` (expected mlp, deepfm or dcn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Backbone,
    pub input_fields: usize,
    pub emb_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_cross_layers: usize,
}

impl PredictorConfig {
    pub fn new(variant: Backbone, input_fields: usize, emb_dim: usize) -> Self {
        Self {
            variant,
            input_fields,
            emb_dim,
            hidden_dims: vec![16, 16],
            n_cross_layers: 2,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_fields * self.emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be non-empty and positive".into()));
        }
        if self.input_fields == 0 || self.emb_dim == 0 {
            return Err(Error::Config("predictor needs at least one field of positive dimension".into()));
        }
        if self.variant == Backbone::Dcn && self.n_cross_layers == 0 {
            return Err(Error::Config("DCN needs at least one cross layer".into()));
        }
        Ok(())
    }
}

/// `concat → [affine → ReLU]* → affine → sigmoid`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub tower: Tower,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    tower: TowerCache,
    hidden: Tensor2,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, width: usize, hidden: &[usize]) -> Self {
        let tower = Tower::new(rng, width, hidden);
        let head = Linear::new(rng, tower.output_width(), 1);
        Self { tower, head }
    }

    pub fn logits(&self, x: &Tensor2) -> Result<(Vec<f64>, MlpCache)> {
        let (hidden, tower) = self.tower.forward(x)?;
        let out = self.head.forward(&hidden)?;
        Ok((out.into_vec(), MlpCache { tower, hidden }))
    }

    pub fn backward(&mut self, cache: &MlpCache, d_logit: &Tensor2) -> Result<Tensor2> {
        let dh = self.head.backward(&cache.hidden, d_logit)?;
        self.tower.backward(&cache.tower, &dh)
    }
}

impl Module for Mlp {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        self.tower.visit_params(&format!("{prefix}.tower"), sink);
        self.head.visit_params(&format!("{prefix}.head"), sink);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Mlp(Mlp),
    DeepFm(DeepFm),
    Dcn(Dcn),
}

#[derive(Clone, Debug)]
enum NetworkCache {
    Mlp(MlpCache),
    DeepFm(DeepFmCache),
    Dcn(DcnCache),
}

/// Forward state needed by [`Predictor::backward`].
#[derive(Clone, Debug)]
pub struct PredictorCache {
    input: Tensor2,
    probs: Vec<f64>,
    net: NetworkCache,
}

impl PredictorCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// A configured backbone mapping `B × (fields·d)` rows to probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub net: Network,
}

impl Predictor {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let width = config.input_width();
        let net = match config.variant {
            Backbone::Mlp => Network::Mlp(Mlp::new(rng, width, &config.hidden_dims)),
            Backbone::DeepFm => Network::DeepFm(DeepFm::new(
                rng,
                config.input_fields,
                config.emb_dim,
                &config.hidden_dims,
            )),
            Backbone::Dcn => Network::Dcn(Dcn::new(rng, width, &config.hidden_dims, config.n_cross_layers)),
        };
        Ok(Self { config, net })
    }

    fn check(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.config.input_width() {
            return Err(dim_err("predictor", self.config.input_width(), x.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2) -> Result<(Vec<f64>, PredictorCache)> {
        self.check(x)?;
        let (logits, net) = match &self.net {
            Network::Mlp(m) => m.logits(x).map(|(l, c)| (l, NetworkCache::Mlp(c)))?,
            Network::DeepFm(m) => m.logits(x).map(|(l, c)| (l, NetworkCache::DeepFm(c)))?,
            Network::Dcn(m) => m.logits(x).map(|(l, c)| (l, NetworkCache::Dcn(c)))?,
        };
        let probs: Vec<f64> = logits.into_iter().map(sigmoid).collect();
        Ok((
            probs.clone(),
            PredictorCache {
                input: x.clone(),
                probs,
                net,
            },
        ))
    }

    /// Probabilities only.
    pub fn predict(&self, x: &Tensor2) -> Result<Vec<f64>> {
        self.forward(x).map(|(p, _)| p)
    }

    /// Single instance given as one vector per field.
    pub fn predict_fields(&self, fields: &[Vec<f64>]) -> Result<f64> {
        let row: Vec<f64> = fields.iter().flatten().copied().collect();
        if fields.len() != self.config.input_fields || row.len() != self.config.input_width() {
            return Err(dim_err(
                "predict_fields",
                format!("{} fields of dim {}", self.config.input_fields, self.config.emb_dim),
                format!("{} fields, {} values", fields.len(), row.len()),
            ));
        }
        Ok(self.predict(&Tensor2::row_vector(&row))?[0])
    }

    /// Takes `dL/dŷ` per row, accumulates parameter gradients and returns
    /// `dL/dx`.
    pub fn backward(&mut self, cache: &PredictorCache, d_prob: &[f64]) -> Result<Tensor2> {
        if d_prob.len() != cache.probs.len() {
            return Err(dim_err("predictor backward", cache.probs.len(), d_prob.len()));
        }
        let d_logit: Vec<f64> = d_prob.iter().zip(&cache.probs).map(|(g, p)| g * p * (1.0 - p)).collect();
        let d_logit = Tensor2::from_vec(d_logit.len(), 1, d_logit)?;
        match (&mut self.net, &cache.net) {
            (Network::Mlp(m), NetworkCache::Mlp(c)) => m.backward(c, &d_logit),
            (Network::DeepFm(m), NetworkCache::DeepFm(c)) => m.backward(&cache.input, c, &d_logit),
            (Network::Dcn(m), NetworkCache::Dcn(c)) => m.backward(c, &d_logit),
            _ => Err(Error::InvalidArgument("cache produced by a different backbone".into())),
        }
    }
}

impl Module for Predictor {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        match &mut self.net {
            Network::Mlp(m) => m.visit_params(prefix, sink),
            Network::DeepFm(m) => m.visit_params(prefix, sink),
            Network::Dcn(m) => m.visit_params(prefix, sink),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_module_gradients, jitter_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(rng: &mut ChaCha8Rng) -> (Tensor2, Vec<u8>) {
        let x = Tensor2::from_vec(5, 12, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (x, vec![1, 0, 0, 1, 1])
    }

    #[test]
    fn zero_mlp_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Predictor::new(&mut rng, PredictorConfig::new(Backbone::Mlp, 4, 3)).unwrap();
        for (_, param) in p.params() {
            param.value.fill(0.0);
        }
        let fields = vec![vec![0.3, -0.2, 0.9]; 4];
        assert_eq!(p.predict_fields(&fields).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Predictor::new(&mut rng, PredictorConfig::new(Backbone::Dcn, 4, 3)).unwrap();
        assert!(matches!(p.predict(&Tensor2::zeros(2, 11)), Err(Error::Dimension { .. })));
        assert!(p.predict_fields(&vec![vec![0.0; 3]; 3]).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = PredictorConfig::new(Backbone::Mlp, 4, 3);
        c.hidden_dims.clear();
        assert!(c.validate().is_err());
        let mut c = PredictorConfig::new(Backbone::Dcn, 4, 3);
        c.n_cross_layers = 0;
        assert!(c.validate().is_err());
        assert_eq!("DeepFM".parse::<Backbone>().unwrap(), Backbone::DeepFm);
        assert!("gbdt".parse::<Backbone>().is_err());
    }

    fn check_backbone(variant: Backbone) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Predictor::new(&mut rng, PredictorConfig::new(variant, 4, 3)).unwrap();
        jitter_params(&mut p, 8, 0.05);
        let (x, y) = toy_batch(&mut rng);
        let err = check_module_gradients(
            &mut p,
            |m| {
                let (probs, cache) = m.forward(&x).unwrap();
                let g = bce_mean_grad(&probs, &y).unwrap();
                m.backward(&cache, &g).unwrap();
                bce_mean(&probs, &y).unwrap()
            },
            1e-6,
        );
        assert!(err < 1e-3, "{variant}: relative error {err}");

        // input gradient
        let (probs, cache) = p.forward(&x).unwrap();
        let g = bce_mean_grad(&probs, &y).unwrap();
        let dx = p.backward(&cache, &g).unwrap();
        let loss_at = |x: &Tensor2| bce_mean(&p.predict(x).unwrap(), &y).unwrap();
        for i in [0, 7, 23, 59] {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi.as_mut_slice()[i] += 1e-6;
            lo.as_mut_slice()[i] -= 1e-6;
            let num = (loss_at(&hi) - loss_at(&lo)) / 2e-6;
            let a = dx.as_slice()[i];
            assert!((a - num).abs() / a.abs().max(1.0) < 1e-3, "{variant} dx[{i}]: {a} vs {num}");
        }
    }

    #[test]
    fn mlp_gradients() {
        check_backbone(Backbone::Mlp);
    }

    #[test]
    fn deepfm_gradients() {
        check_backbone(Backbone::DeepFm);
    }

    #[test]
    fn dcn_gradients() {
        check_backbone(Backbone::Dcn);
    }
}
