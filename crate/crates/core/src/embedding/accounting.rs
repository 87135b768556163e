//! Activated-parameter and lookup accounting.
//!
//! An instance "activates" the full table of every field it embeds in the
//! main model, plus every auxiliary table (the auxiliary model always
//! embeds all fields). All averages are kept as exact rationals.

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::table::{full_param_count, validate_selection, EmbeddingSet};
use crate::error::{Error, Result};

/// Relative reduction of activated embedding parameters:
/// `(1 − r_kept) − d2/d1`. `d2 = 0` means there is no auxiliary model.
pub fn delta_pae(d1: u64, d2: u64, r_kept: Rational64) -> Result<Rational64> {
    if d1 == 0 || d2 > d1 {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= d2 <= d1 and d1 > 0, got d1={d1}, d2={d2}"
        )));
    }
    check_keep(r_kept)?;
    Ok(Rational64::from_integer(1) - r_kept - Rational64::new(d2 as i64, d1 as i64))
}

/// Relative reduction of main-model lookups: `1 − r_kept`.
pub fn delta_el(r_kept: Rational64) -> Result<Rational64> {
    check_keep(r_kept)?;
    Ok(Rational64::from_integer(1) - r_kept)
}

fn check_keep(r: Rational64) -> Result<()> {
    if r <= Rational64::zero() || r > Rational64::from_integer(1) {
        return Err(Error::InvalidArgument(format!("keep fraction {r} outside (0, 1]")));
    }
    Ok(())
}

/// `main_full − main_reduction + aux_full`.
pub fn compose_activated(main_full: &BigRational, main_reduction: &BigRational, aux_full: &BigRational) -> BigRational {
    main_full - main_reduction + aux_full
}

/// Exact value of a decimal literal such as `"64.58"`.
pub fn parse_decimal(s: &str) -> Result<BigRational> {
    let bad = || Error::InvalidArgument(format!("not a decimal number: {s:?}"));
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let v = BigRational::new(digits, denom);
    Ok(if neg { -v } else { v })
}

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Running totals over observed batches. Merging is associative and
/// commutative, so shards can be accumulated in any order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ActivationLedger {
    pub batches_observed: u64,
    pub instances: u64,
    /// Σ over batches of the batch-mean activated parameters (main + aux).
    pub sum_activated_params: BigRational,
    /// Σ over batches of the batch-mean main-model activated parameters.
    pub sum_main_activated: BigRational,
    pub main_lookups: u64,
    pub aux_lookups: u64,
    pub main_full: u64,
    pub aux_full: u64,
}

impl ActivationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one batch given each instance's selected main-model fields.
    pub fn record_batch(
        &mut self,
        selections: &[&[usize]],
        main_vocab_sizes: &[usize],
        d1: usize,
        aux_full: u64,
        aux_lookups_per_instance: u64,
    ) -> Result<()> {
        if selections.is_empty() {
            return Err(Error::InvalidArgument("cannot record an empty batch".into()));
        }
        let main_full = full_param_count(main_vocab_sizes, d1);
        if self.batches_observed > 0 && (self.main_full != main_full || self.aux_full != aux_full) {
            return Err(Error::InvalidArgument("ledger already tracks a different model shape".into()));
        }
        let mut main_sum = 0u64;
        let mut lookups = 0u64;
        for sel in selections {
            validate_selection(sel, main_vocab_sizes.len())?;
            main_sum += sel.iter().map(|&n| main_vocab_sizes[n] as u64 * d1 as u64).sum::<u64>();
            lookups += sel.len() as u64;
        }
        let m = selections.len() as u64;
        let main_mean = BigRational::new(BigInt::from(main_sum), BigInt::from(m));
        self.sum_activated_params += &main_mean + big(aux_full);
        self.sum_main_activated += main_mean;
        self.batches_observed += 1;
        self.instances += m;
        self.main_lookups += lookups;
        self.aux_lookups += aux_lookups_per_instance * m;
        self.main_full = main_full;
        self.aux_full = aux_full;
        Ok(())
    }

    /// [`Self::record_batch`] reading shapes from the embedding sets.
    pub fn record_batch_activation(
        &mut self,
        selections: &[&[usize]],
        main: &EmbeddingSet,
        aux: Option<&EmbeddingSet>,
    ) -> Result<()> {
        let (aux_full, aux_lookups) = match aux {
            Some(a) => (full_param_count(&a.vocab_sizes(), a.dim()), a.n_fields() as u64),
            None => (0, 0),
        };
        self.record_batch(selections, &main.vocab_sizes(), main.dim(), aux_full, aux_lookups)
    }

    pub fn merge(&mut self, other: &ActivationLedger) -> Result<()> {
        if other.batches_observed == 0 {
            return Ok(());
        }
        if self.batches_observed > 0 && (self.main_full != other.main_full || self.aux_full != other.aux_full) {
            return Err(Error::InvalidArgument("cannot merge ledgers of different models".into()));
        }
        self.batches_observed += other.batches_observed;
        self.instances += other.instances;
        self.sum_activated_params += &other.sum_activated_params;
        self.sum_main_activated += &other.sum_main_activated;
        self.main_lookups += other.main_lookups;
        self.aux_lookups += other.aux_lookups;
        self.main_full = other.main_full;
        self.aux_full = other.aux_full;
        Ok(())
    }

    fn per_batch(&self, sum: &BigRational) -> Option<BigRational> {
        (self.batches_observed > 0).then(|| sum / big(self.batches_observed))
    }

    /// Mean over batches of activated parameters, main plus auxiliary.
    pub fn avg_activated(&self) -> Option<BigRational> {
        self.per_batch(&self.sum_activated_params)
    }

    pub fn avg_main_activated(&self) -> Option<BigRational> {
        self.per_batch(&self.sum_main_activated)
    }

    /// `main_full − avg_main_activated`.
    pub fn main_reduction(&self) -> Option<BigRational> {
        self.avg_main_activated().map(|m| big(self.main_full) - m)
    }

    /// Observed `(main_full − avg_activated) / main_full`.
    pub fn observed_delta_pae(&self) -> Option<BigRational> {
        let avg = self.avg_activated()?;
        (self.main_full > 0).then(|| (big(self.main_full) - avg) / big(self.main_full))
    }

    pub fn summary(&self) -> Option<LedgerSummary> {
        let f = |r: BigRational| r.to_f64().unwrap_or(f64::NAN);
        Some(LedgerSummary {
            batches: self.batches_observed,
            instances: self.instances,
            main_full: self.main_full,
            aux_full: self.aux_full,
            avg_activated: f(self.avg_activated()?),
            avg_main_activated: f(self.avg_main_activated()?),
            main_reduction: f(self.main_reduction()?),
            delta_pae: self.observed_delta_pae().map(f).unwrap_or(0.0),
            main_lookups_per_instance: self.main_lookups as f64 / self.instances as f64,
            aux_lookups_per_instance: self.aux_lookups as f64 / self.instances as f64,
        })
    }
}

/// Floating-point view of a ledger for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub batches: u64,
    pub instances: u64,
    pub main_full: u64,
    pub aux_full: u64,
    pub avg_activated: f64,
    pub avg_main_activated: f64,
    pub main_reduction: f64,
    pub delta_pae: f64,
    pub main_lookups_per_instance: f64,
    pub aux_lookups_per_instance: f64,
}
