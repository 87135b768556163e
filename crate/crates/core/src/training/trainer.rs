//! Mini-batch training loop, pretraining and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Method, TrainConfig};
use super::model::Model;
use crate::data::{build_vocab, quantize_all, split_dataset, Instance, RawRecord, Schema, Vocabulary};
use crate::embedding::{delta_pae, ActivationLedger, LedgerSummary};
use crate::error::{Error, Result};
use crate::metrics::{auc, logloss, Metrics};
use crate::numerics::{AdamConfig, BatchNormMode, Module};
use crate::selection::{LossBreakdown, LossSwitches, SelectionMode};

/// Quantized train/validation/test splits with the vocabulary built from
/// the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub vocab: Vocabulary,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocab.sizes()
    }
}

/// Splits 8:1:1 by `split_seed`, builds the vocabulary on the training
/// split only and quantizes every split with it.
pub fn prepare_dataset(schema: &Schema, records: Vec<RawRecord>, min_freq: u64, split_seed: u64) -> Result<Dataset> {
    let splits = split_dataset(records, split_seed)?;
    let vocab = build_vocab(&splits.train, schema, min_freq)?;
    Ok(Dataset {
        schema: schema.clone(),
        train: quantize_all(&splits.train, schema, &vocab)?,
        val: quantize_all(&splits.val, schema, &vocab)?,
        test: quantize_all(&splits.test, schema, &vocab)?,
        vocab,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce_aux: f64,
    pub bce_main: f64,
    pub eal: f64,
    pub pal: f64,
    pub total: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub k: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Mean auxiliary BCE per pretraining epoch.
    pub pretrain_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Activation accounting of the kept model on the validation split.
    pub ledger: Option<LedgerSummary>,
}

impl TrainReport {
    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }
}

/// Result of scoring a model on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub ledger: ActivationLedger,
    /// Mean `(P_a − P_m)²` when the model has an auxiliary predictor.
    pub prediction_gap: Option<f64>,
    /// Mean squared gap between aligned auxiliary and main embeddings.
    pub embedding_gap: Option<f64>,
    /// How often each field was selected, when selection is per instance.
    pub field_counts: Option<Vec<u64>>,
    pub scores: Vec<f64>,
}

impl Evaluation {
    /// Mean fraction of each instance's selected fields that lie in
    /// `relevant`.
    pub fn selection_precision(&self, relevant: &[usize]) -> Option<f64> {
        let counts = self.field_counts.as_ref()?;
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        let hits: u64 = relevant.iter().filter_map(|&f| counts.get(f)).sum();
        Some(hits as f64 / total as f64)
    }
}

fn as_batch(instances: &[Instance]) -> (Vec<&[u32]>, Vec<u8>) {
    (
        instances.iter().map(|i| i.x.as_slice()).collect(),
        instances.iter().map(|i| i.label).collect(),
    )
}

/// Scores `instances` with frozen parameters; batch norm uses running
/// statistics.
pub fn evaluate(model: &Model, instances: &[Instance], batch_size: usize) -> Result<Evaluation> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let n_fields = model.main_embeddings().n_fields();
    let mut scores = Vec::with_capacity(instances.len());
    let mut labels = Vec::with_capacity(instances.len());
    let mut ledger = ActivationLedger::new();
    let mut pred_gap = 0.0;
    let mut emb_gap = 0.0;
    let mut has_aux = false;
    let mut field_counts: Option<Vec<u64>> = None;
    for chunk in instances.chunks(batch_size.max(1)) {
        let (batch, ys) = as_batch(chunk);
        let inf = model.infer(&batch)?;
        model.record_activation(&mut ledger, batch.len(), inf.selections.as_deref())?;
        if let Some(pa) = &inf.p_aux {
            has_aux = true;
            pred_gap += pa.iter().zip(&inf.p_main).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
        }
        if let Some(g) = &inf.embedding_gap {
            emb_gap += g.iter().sum::<f64>();
        }
        if let Some(sels) = &inf.selections {
            let counts = field_counts.get_or_insert_with(|| vec![0; n_fields]);
            for s in sels {
                for &i in &s.indices {
                    counts[i] += 1;
                }
            }
        }
        scores.extend(inf.p_main);
        labels.extend(ys);
    }
    let n = instances.len() as f64;
    let summary = ledger
        .summary()
        .ok_or_else(|| Error::InvalidArgument("no batches evaluated".into()))?;
    let metrics = Metrics {
        auc: auc(&scores, &labels)?,
        logloss: logloss(&scores, &labels)?,
        n: instances.len() as u64,
        activated_params_avg: summary.avg_activated,
        lookups_avg: summary.main_lookups_per_instance + summary.aux_lookups_per_instance,
    };
    Ok(Evaluation {
        metrics,
        ledger,
        prediction_gap: has_aux.then(|| pred_gap / n),
        embedding_gap: has_aux.then(|| emb_gap / n),
        field_counts,
        scores,
    })
}

// Initialization and batch order draw from their own streams so that a
// training seed never replays the stream a data generator used.
const INIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded batch order over `n` items; batches smaller than two are dropped
/// because training-mode batch norm needs two rows.
fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn gather(instances: &[Instance], idx: &[usize]) -> (Vec<Vec<u32>>, Vec<u8>) {
    (
        idx.iter().map(|&i| instances[i].x.clone()).collect(),
        idx.iter().map(|&i| instances[i].label).collect(),
    )
}

fn check_finite(loss: &LossBreakdown, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericAbort(format!(
            "non-finite loss during {what} at epoch {epoch}, batch {batch}: \
             bce_aux={} bce_main={} eal={} pal={}",
            loss.bce_aux, loss.bce_main, loss.eal, loss.pal
        )))
    }
}

/// Trains the auxiliary side alone on all fields for `epochs` epochs.
///
/// Early selection uses a throwaway full-width head; late selection trains
/// in soft mode. Fixed-subset baselines have nothing to pretrain. Returns
/// the mean BCE per epoch.
pub fn pretrain(
    model: &mut Model,
    train: &[Instance],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epochs: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(epochs);
    if epochs == 0 || matches!(model, Model::Fixed(_)) {
        return Ok(losses);
    }
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut head = match model {
        Model::Aefs(pair) => {
            let mut h = pair.pretrain_head(rng)?;
            h.set_adam_config(adam);
            Some(h)
        }
        _ => None,
    };
    for epoch in 0..epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(rng, train.len(), config.batch_size);
        for (b, idx) in batches.iter().enumerate() {
            let (xs, ys) = gather(train, idx);
            let batch: Vec<&[u32]> = xs.iter().map(Vec::as_slice).collect();
            let loss = match (&mut *model, head.as_mut()) {
                (Model::Aefs(pair), Some(h)) => {
                    pair.aux_embeddings.zero_grad();
                    pair.controller.zero_grad();
                    h.zero_grad();
                    let l = pair.pretrain_step(h, &batch, &ys)?;
                    check_finite(&LossBreakdown::new(l, 0.0, 0.0, 0.0), "pretraining", epoch + 1, b)?;
                    pair.aux_embeddings.adam_step()?;
                    pair.controller.adam_step()?;
                    h.adam_step()?;
                    l
                }
                (Model::Adafs(m), _) => {
                    m.zero_grad();
                    let l = m.train_step_in(&batch, &ys, SelectionMode::Soft)?;
                    check_finite(&l, "pretraining", epoch + 1, b)?;
                    m.adam_step()?;
                    l.total
                }
                _ => unreachable!("fixed models return early"),
            };
            sum += loss;
        }
        losses.push(sum / batches.len().max(1) as f64);
    }
    Ok(losses)
}

/// Joint training. Every step sums the enabled loss terms, backpropagates
/// into all parameters and takes one Adam step. The parameters of the
/// epoch with the best validation AUC are returned, in inference mode.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with(data, config, |_, _, _| {})
}

/// [`train`] with a hook called after every epoch with its record, the
/// model in inference mode and the validation evaluation.
pub fn train_with<F>(data: &Dataset, config: &TrainConfig, mut on_epoch: F) -> Result<(Model, TrainReport)>
where
    F: FnMut(&EpochRecord, &Model, &Evaluation),
{
    config.validate()?;
    if data.train.len() < 2 || data.val.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-trivial train and validation split".into()));
    }
    let vocab_sizes = data.vocab_sizes();
    let mut model = Model::build(&mut seeded_stream(config.seed, INIT_STREAM), config, &vocab_sizes)?;
    let mut order_rng = seeded_stream(config.seed, ORDER_STREAM);

    model.set_mode(BatchNormMode::Training);
    let pretrain_losses = pretrain(&mut model, &data.train, config, &mut order_rng, config.pretrain_epochs)?;

    let switches = LossSwitches {
        eal: config.enable_eal,
        pal: config.enable_pal,
    };
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        model.set_mode(BatchNormMode::Training);
        let batches = epoch_batches(&mut order_rng, data.train.len(), config.batch_size);
        let mut sums = LossBreakdown::default();
        for (b, idx) in batches.iter().enumerate() {
            let (xs, ys) = gather(&data.train, idx);
            let batch: Vec<&[u32]> = xs.iter().map(Vec::as_slice).collect();
            model.zero_grad();
            let loss = model.train_step(&batch, &ys, switches)?;
            check_finite(&loss, "training", epoch, b)?;
            model.adam_step()?;
            sums.bce_aux += loss.bce_aux;
            sums.bce_main += loss.bce_main;
            sums.eal += loss.eal;
            sums.pal += loss.pal;
        }
        let m = batches.len().max(1) as f64;
        let mean = LossBreakdown::new(sums.bce_aux / m, sums.bce_main / m, sums.eal / m, sums.pal / m);

        model.set_mode(BatchNormMode::Inference);
        let val = evaluate(&model, &data.val, config.batch_size)?;
        epochs.push(EpochRecord {
            epoch,
            bce_aux: mean.bce_aux,
            bce_main: mean.bce_main,
            eal: mean.eal,
            pal: mean.pal,
            total: mean.total,
            val_auc: val.metrics.auc,
            val_logloss: val.metrics.logloss,
            seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(epochs.last().expect("just pushed"), &model, &val);
        if best.as_ref().is_none_or(|(_, a, _)| val.metrics.auc > *a) {
            best = Some((epoch, val.metrics.auc, model.clone()));
        }
    }
    let (best_epoch, best_val_auc, mut model) = best.expect("max_epochs >= 1");
    model.set_mode(BatchNormMode::Inference);
    let val = evaluate(&model, &data.val, config.batch_size)?;
    let report = TrainReport {
        method: config.method,
        seed: config.seed,
        config_hash: config.hash(),
        k: config.k(vocab_sizes.len())?,
        n_train: data.train.len(),
        n_val: data.val.len(),
        pretrain_losses,
        epochs,
        best_epoch,
        best_val_auc,
        ledger: val.ledger.summary(),
    };
    Ok((model, report))
}

/// Configured ΔPaE for a method: `(1 − r_kept) − d2/d1` for early
/// selection, none otherwise.
pub fn configured_delta_pae(config: &TrainConfig, n_fields: usize) -> Result<Option<f64>> {
    if config.method != Method::Aefs {
        return Ok(None);
    }
    let k = config.k(n_fields)?;
    let kept = num_rational::Rational64::new(k as i64, n_fields as i64);
    let v = delta_pae(config.d1 as u64, config.d2 as u64, kept)?;
    Ok(Some(*v.numer() as f64 / *v.denom() as f64))
}
