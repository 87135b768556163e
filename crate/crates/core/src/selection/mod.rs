//! Feature-field selection: k-max pooling, late (AdaFS) selection, the
//! early-selection model pair and fixed-subset baselines.

mod adafs;
mod aefs;
mod fixed;
mod losses;
mod topk;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adafs::{AdafsModel, SelectionMode};
pub use aefs::{ForwardTrace, ModelPair, PairConfig};
pub use fixed::FixedFieldModel;
pub use losses::{embedding_alignment_loss, prediction_alignment_loss};
pub use topk::{k_from_ratio, k_max_indices, l1_normalize_selected, scale_embeddings, select, SelectionResult};

use crate::error::Result;

/// Which alignment terms enter the joint loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub eal: bool,
    pub pal: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self { eal: true, pal: true }
    }
}

/// Batch-mean loss components; disabled terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce_aux: f64,
    pub bce_main: f64,
    pub eal: f64,
    pub pal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bce_aux: f64, bce_main: f64, eal: f64, pal: f64) -> Self {
        Self {
            bce_aux,
            bce_main,
            eal,
            pal,
            total: bce_aux + bce_main + eal + pal,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.bce_aux, self.bce_main, self.eal, self.pal, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Output of an evaluation pass over one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub p_main: Vec<f64>,
    pub p_aux: Option<Vec<f64>>,
    pub selections: Option<Vec<SelectionResult>>,
    /// Per-instance mean squared gap between aligned aux and main embeddings.
    pub embedding_gap: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct DumpLine<'a> {
    instance: u64,
    indices: &'a [usize],
    weights: &'a [f64],
}

/// Writes one JSON line per instance: `{"instance", "indices", "weights"}`.
/// Instance ids start at `first_id`.
pub fn write_selection_dump<W: Write>(out: &mut W, first_id: u64, selections: &[SelectionResult]) -> Result<()> {
    for (i, s) in selections.iter().enumerate() {
        let line = DumpLine {
            instance: first_id + i as u64,
            indices: &s.indices,
            weights: &s.weights,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
