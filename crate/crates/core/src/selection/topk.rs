//! K-max pooling over importance scores and the selected-weight transforms.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor2;

/// Selected field indices (descending score) and their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// `k = floor(N·r)`, at least 1.
pub fn k_from_ratio(n_fields: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Config(format!("keep ratio r must lie in (0, 1], got {r}")));
    }
    Ok(((n_fields as f64 * r).floor() as usize).max(1).min(n_fields))
}

/// Indices of the `k` largest scores, highest first; equal scores go to
/// the lower index.
pub fn k_max_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::OutOfRange {
            what: "k",
            index: k,
            size: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("selection scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index order among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    Ok(order)
}

/// `W_j = S[I_j] / Σ_j S[I_j]`.
pub fn l1_normalize_selected(scores: &[f64], indices: &[usize]) -> Result<Vec<f64>> {
    let mut selected = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = *scores.get(i).ok_or(Error::OutOfRange {
            what: "selected index",
            index: i,
            size: scores.len(),
        })?;
        if s < 0.0 {
            return Err(Error::InvalidArgument(format!("negative selected score {s}")));
        }
        selected.push(s);
    }
    let z: f64 = selected.iter().sum();
    if z <= 0.0 {
        return Err(Error::DegenerateBatch("selected scores sum to zero".into()));
    }
    Ok(selected.into_iter().map(|s| s / z).collect())
}

/// Runs k-max pooling on one score row. With `reweight` the selected scores
/// are L1-normalised, otherwise they are used as they are.
pub fn select(scores: &[f64], k: usize, reweight: bool) -> Result<SelectionResult> {
    let indices = k_max_indices(scores, k)?;
    let weights = if reweight {
        l1_normalize_selected(scores, &indices)?
    } else {
        indices.iter().map(|&i| scores[i]).collect()
    };
    Ok(SelectionResult { indices, weights })
}

/// `e_j · W_j` for each selected vector.
pub fn scale_embeddings(selected: &[Vec<f64>], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    if selected.len() != weights.len() {
        return Err(dim_err("scale_embeddings", selected.len(), weights.len()));
    }
    Ok(selected
        .iter()
        .zip(weights)
        .map(|(e, &w)| e.iter().map(|v| v * w).collect())
        .collect())
}

/// Row-wise slot scaling of a `B × (k·d)` tensor by `B × k` weights.
pub(crate) fn scale_slots(x: &Tensor2, weights: &[Vec<f64>], dim: usize) -> Tensor2 {
    let mut out = x.clone();
    for (b, w) in weights.iter().enumerate() {
        let row = out.row_mut(b);
        for (j, &wj) in w.iter().enumerate() {
            for v in &mut row[j * dim..(j + 1) * dim] {
                *v *= wj;
            }
        }
    }
    out
}

/// Backward of [`scale_slots`]: returns `dL/dx` and `dL/dW` (`B × k`).
pub(crate) fn scale_slots_backward(
    x: &Tensor2,
    weights: &[Vec<f64>],
    dim: usize,
    grad: &Tensor2,
) -> (Tensor2, Vec<Vec<f64>>) {
    let mut dx = grad.clone();
    let mut dw = Vec::with_capacity(weights.len());
    for (b, w) in weights.iter().enumerate() {
        let xr = x.row(b);
        let gr = grad.row(b);
        let mut dwb = Vec::with_capacity(w.len());
        let dxr = dx.row_mut(b);
        for (j, &wj) in w.iter().enumerate() {
            let span = j * dim..(j + 1) * dim;
            dwb.push(xr[span.clone()].iter().zip(&gr[span.clone()]).map(|(a, b)| a * b).sum());
            for v in &mut dxr[span] {
                *v *= wj;
            }
        }
        dw.push(dwb);
    }
    (dx, dw)
}

/// Maps `dL/dW` back to the full score vector. Unselected entries get zero.
pub(crate) fn selection_backward(
    n_fields: usize,
    sel: &SelectionResult,
    d_weights: &[f64],
    reweight: bool,
    scores: &[f64],
) -> Vec<f64> {
    let mut ds = vec![0.0; n_fields];
    if reweight {
        let z: f64 = sel.indices.iter().map(|&i| scores[i]).sum();
        let dot: f64 = d_weights.iter().zip(&sel.weights).map(|(g, w)| g * w).sum();
        for (&i, &g) in sel.indices.iter().zip(d_weights) {
            ds[i] = (g - dot) / z;
        }
    } else {
        for (&i, &g) in sel.indices.iter().zip(d_weights) {
            ds[i] = g;
        }
    }
    ds
}
