//! Alignment losses between the auxiliary and main models.

use crate::error::{dim_err, Result};
use crate::numerics::{Linear, Tensor2};

/// Reshapes a `B × (k·d)` slot tensor to `(B·k) × d`; same row-major data.
pub(crate) fn slots_as_rows(x: &Tensor2, dim: usize) -> Result<Tensor2> {
    Tensor2::from_vec(x.len() / dim, dim, x.as_slice().to_vec())
}

/// Mean over batch and over all `k·d1` components of
/// `(fc(E_a_sel) − E_m_sel)²`.
///
/// `aux_sel` is `B × (k·d2)`, `main_sel` is `B × (k·d1)`.
pub fn embedding_alignment_loss(aux_sel: &Tensor2, main_sel: &Tensor2, fc: &Linear) -> Result<f64> {
    let d2 = fc.inputs();
    let d1 = fc.outputs();
    if aux_sel.rows() != main_sel.rows() || aux_sel.cols() % d2 != 0 || aux_sel.cols() / d2 * d1 != main_sel.cols() {
        return Err(dim_err(
            "embedding_alignment_loss",
            format!("{} rows of k·{d2} and k·{d1}", aux_sel.rows()),
            format!("{:?} and {:?}", aux_sel.shape(), main_sel.shape()),
        ));
    }
    if main_sel.is_empty() {
        return Ok(0.0);
    }
    let aligned = fc.forward(&slots_as_rows(aux_sel, d2)?)?;
    let sq: f64 = aligned
        .as_slice()
        .iter()
        .zip(main_sel.as_slice())
        .map(|(a, m)| (a - m) * (a - m))
        .sum();
    Ok(sq / main_sel.len() as f64)
}

/// `(1/M)·Σ (P_a − P_m)²`.
pub fn prediction_alignment_loss(p_aux: &[f64], p_main: &[f64]) -> Result<f64> {
    if p_aux.len() != p_main.len() {
        return Err(dim_err("prediction_alignment_loss", p_aux.len(), p_main.len()));
    }
    if p_aux.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = p_aux.iter().zip(p_main).map(|(a, m)| (a - m) * (a - m)).sum();
    Ok(s / p_aux.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Param;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_fc(d: usize) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fc = Linear::new(&mut rng, d, d);
        let mut w = Tensor2::zeros(d, d);
        for i in 0..d {
            w.set(i, i, 1.0);
        }
        fc.weight = Param::new(w);
        fc
    }

    #[test]
    fn eal_zero_when_aligned() {
        let fc = identity_fc(2);
        let a = Tensor2::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(embedding_alignment_loss(&a, &a, &fc).unwrap(), 0.0);
    }

    #[test]
    fn eal_component_mean() {
        let fc = identity_fc(2);
        let a = Tensor2::from_rows(&[[1.0, -1.0]]).unwrap();
        let m = Tensor2::zeros(1, 2);
        assert_eq!(embedding_alignment_loss(&a, &m, &fc).unwrap(), 1.0);
        assert!(embedding_alignment_loss(&a, &Tensor2::zeros(1, 3), &fc).is_err());
    }

    #[test]
    fn pal_cases() {
        assert_eq!(prediction_alignment_loss(&[0.3, 0.6], &[0.3, 0.6]).unwrap(), 0.0);
        assert_eq!(prediction_alignment_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        let a = [0.1, 0.9, 0.4];
        let b = [0.7, 0.2, 0.4];
        assert_eq!(
            prediction_alignment_loss(&a, &b).unwrap(),
            prediction_alignment_loss(&b, &a).unwrap()
        );
        assert!(prediction_alignment_loss(&a, &b[..2]).is_err());
    }
}
