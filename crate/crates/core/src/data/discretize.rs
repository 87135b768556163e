//! Numeric-to-categorical discretization.

use std::fmt;

use crate::error::{Error, Result};

/// Token for an absent numeric value, kept distinct from the small-value bucket.
pub const MISSING_TOKEN: &str = "__missing__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NumericBucket {
    Bucket(u64),
    Missing,
}

impl fmt::Display for NumericBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bucket(b) => write!(f, "{b}"),
            Self::Missing => f.write_str(MISSING_TOKEN),
        }
    }
}

/// `floor((ln x)^2)` for `x > 2`, else bucket 1; missing stays missing.
pub fn discretize_numeric(x: Option<f64>) -> NumericBucket {
    match x {
        None => NumericBucket::Missing,
        Some(v) if v > 2.0 => NumericBucket::Bucket(v.ln().powi(2).floor() as u64),
        Some(_) => NumericBucket::Bucket(1),
    }
}

/// Parses a raw numeric token; the empty string is a missing value.
pub fn parse_numeric(token: &str) -> Result<Option<f64>> {
    let t = token.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::InvalidArgument(format!("non-numeric token {token:?}"))),
    }
}
