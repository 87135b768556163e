use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor2;

/// Glorot-uniform sample in `±sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("shape is rows*cols by construction")
}

/// Seeded [`xavier_uniform`]; identical seeds give bit-identical tensors.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(&mut rng, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(xavier_init(7, 5, 11), xavier_init(7, 5, 11));
        assert_ne!(xavier_init(7, 5, 11), xavier_init(7, 5, 12));
    }

    #[test]
    fn bounded_and_variance_matches_glorot() {
        let (r, c) = (1000, 1000);
        let t = xavier_init(r, c, 1);
        let bound = (6.0 / (r + c) as f64).sqrt();
        assert!(t.as_slice().iter().all(|v| v.abs() <= bound));
        let n = t.len() as f64;
        let mean = t.as_slice().iter().sum::<f64>() / n;
        let var = t.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / (r + c) as f64;
        assert!((var - target).abs() / target < 0.2, "var {var} target {target}");
    }
}
