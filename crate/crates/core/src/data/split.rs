use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded 8:1:1 partition. Train gets `floor(0.8 n)`, validation
/// `floor(0.1 n)`, test the remainder.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<Splits<T>> {
    let n = items.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 instances to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("each index taken once"))
            .collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        let s = split_dataset((0..10).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = split_dataset((0..45_000).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (36_000, 4_500, 4_500));
        assert!(split_dataset((0..9).collect::<Vec<_>>(), 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset((0..100).collect::<Vec<_>>(), 42).unwrap();
        let b = split_dataset((0..100).collect::<Vec<_>>(), 42).unwrap();
        assert_eq!(a, b);
        let c = split_dataset((0..100).collect::<Vec<_>>(), 43).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn partitions_input(n in 10usize..500, seed in any::<u64>()) {
            let s = split_dataset((0..n).collect::<Vec<_>>(), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
