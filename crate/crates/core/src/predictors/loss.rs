//! Binary cross-entropy on clamped probabilities.

use crate::error::{dim_err, Result};

pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−y·ln ŷ − (1−y)·ln(1−ŷ)` with `ŷ` clamped to `[1e-7, 1−1e-7]`.
pub fn bce(p: f64, y: u8) -> f64 {
    let p = clamp(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn bce_mean(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(dim_err("bce_mean", p.len(), y.len()));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / p.len() as f64)
}

/// `d bce_mean / d ŷ_i`; zero where the clamp is active.
pub fn bce_mean_grad(p: &[f64], y: &[u8]) -> Result<Vec<f64>> {
    if p.len() != y.len() {
        return Err(dim_err("bce_mean_grad", p.len(), y.len()));
    }
    let m = p.len() as f64;
    Ok(p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else if y == 1 {
                -1.0 / (p * m)
            } else {
                1.0 / ((1.0 - p) * m)
            }
        })
        .collect())
}
