//! Per-field embedding tables and the activated-parameter ledger.

mod accounting;
mod table;

pub use accounting::{
    compose_activated, delta_el, delta_pae, parse_decimal, ActivationLedger, LedgerSummary,
};
pub use table::{full_param_count, table_param_count, validate_selection, EmbeddingSet, EmbeddingTable};
