//! Adaptive early feature selection for deep CTR models.
//!
//! A small auxiliary model scores the feature fields of every instance
//! before the main embedding layer runs; the main model then embeds only
//! the top-k fields. Both models train jointly with an embedding alignment
//! loss and a prediction alignment loss. The crate also does exact
//! bookkeeping of activated embedding parameters and lookups.

pub mod error;
pub mod data;
pub mod embedding;
pub mod numerics;
pub mod predictors;
pub mod metrics;
pub mod selection;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Module, Param, Tensor2};
