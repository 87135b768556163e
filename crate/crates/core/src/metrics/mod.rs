//! Ranking and calibration metrics, significance testing and reports.

mod report;
mod welch;

use serde::{Deserialize, Serialize};

pub use report::{emit_report, format_table, read_report, ReportRow, REPORT_JSONL, REPORT_TABLE};
pub use welch::{welch_t_test, WelchTest};

use crate::error::{dim_err, Error, Result};
use crate::predictors::bce_mean;

/// Evaluation summary of one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
    pub n: u64,
    pub activated_params_avg: f64,
    pub lookups_avg: f64,
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half. Computed from average ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(dim_err("auc", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc scores"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay
    // in integers.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&o| labels[o] == 1).count() as u128;
        pos_rank_sum2 += rank2 * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = pos_rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean binary cross-entropy with scores clamped to `[1e-7, 1−1e-7]`.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    bce_mean(scores, labels)
}
