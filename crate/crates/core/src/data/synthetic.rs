//! Planted-signal CTR data for desk-scale experiments.
//!
//! Each field draws its category uniformly. Labels are Bernoulli in
//! `sigmoid(bias + Σ_{n informative} w_n[x_n])`, so fields outside the
//! informative set are independent of the label.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::records::RawRecord;
use super::schema::Schema;
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_fields: usize,
    pub n_informative: usize,
    pub vocab_sizes: Vec<usize>,
    pub n_records: usize,
    pub teacher_seed: u64,
    /// Standard deviation of the per-category teacher weights.
    pub weight_scale: f64,
    pub bias: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::uniform(16, 8, 50, 200_000, 0)
    }
}

impl SyntheticSpec {
    pub fn uniform(n_fields: usize, n_informative: usize, vocab: usize, n_records: usize, seed: u64) -> Self {
        Self {
            n_fields,
            n_informative,
            vocab_sizes: vec![vocab; n_fields],
            n_records,
            teacher_seed: seed,
            weight_scale: 0.8,
            bias: -1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fields == 0 || self.n_informative > self.n_fields {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= informative ({}) <= fields ({}), fields >= 1",
                self.n_informative, self.n_fields
            )));
        }
        if self.vocab_sizes.len() != self.n_fields || self.vocab_sizes.iter().any(|&v| v < 2) {
            return Err(Error::InvalidArgument(
                "one vocabulary size >= 2 is required per field".into(),
            ));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale >= 0.0 && self.bias.is_finite()) {
            return Err(Error::InvalidArgument("teacher scale and bias must be finite".into()));
        }
        Ok(())
    }
}

/// The planted linear teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub bias: f64,
    /// Per-field category weights; `None` for noise fields.
    pub weights: Vec<Option<Vec<f64>>>,
}

impl Teacher {
    pub fn logit_of_categories(&self, categories: &[u32]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(categories)
                .filter_map(|(w, &c)| w.as_ref().map(|w| w[c as usize]))
                .sum::<f64>()
    }

    /// Teacher logit of a generated record (tokens are `c<category>`).
    pub fn logit(&self, record: &RawRecord) -> Result<f64> {
        let cats = record
            .tokens
            .iter()
            .map(|t| parse_category(t))
            .collect::<Result<Vec<u32>>>()?;
        Ok(self.logit_of_categories(&cats))
    }
}

pub fn category_token(c: u32) -> String {
    format!("c{c}")
}

fn parse_category(token: &str) -> Result<u32> {
    token
        .strip_prefix('c')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("not a synthetic token: {token:?}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub schema: Schema,
    pub records: Vec<RawRecord>,
    /// Sorted field indices that drive the label.
    pub informative: Vec<usize>,
    pub teacher: Teacher,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.teacher_seed);
    let mut informative = sample(&mut rng, spec.n_fields, spec.n_informative).into_vec();
    informative.sort_unstable();

    let normal = Normal::new(0.0, spec.weight_scale)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let weights = (0..spec.n_fields)
        .map(|f| {
            informative.binary_search(&f).ok().map(|_| {
                (0..spec.vocab_sizes[f])
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            })
        })
        .collect();
    let teacher = Teacher {
        bias: spec.bias,
        weights,
    };

    let mut cats = vec![0u32; spec.n_fields];
    let records = (0..spec.n_records)
        .map(|_| {
            for (c, &v) in cats.iter_mut().zip(&spec.vocab_sizes) {
                *c = rng.random_range(0..v as u32);
            }
            let p = sigmoid(teacher.logit_of_categories(&cats));
            let label = u8::from(rng.random::<f64>() < p);
            RawRecord {
                label,
                tokens: cats.iter().map(|&c| category_token(c)).collect(),
            }
        })
        .collect();

    Ok(SyntheticData {
        schema: Schema::all_categorical(spec.n_fields),
        records,
        informative,
        teacher,
    })
}
