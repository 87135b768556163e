//! Raw-record ingestion, quantization, vocabularies, splitting and the
//! synthetic planted-signal generator.

mod discretize;
mod records;
mod schema;
mod split;
mod synthetic;
mod vocab;

pub use discretize::{discretize_numeric, parse_numeric, NumericBucket, MISSING_TOKEN};
pub use records::{quantize, quantize_all, read_criteo, read_generic, write_generic, Instance, RawRecord};
pub use schema::{FieldKind, FieldSchema, Schema};
pub use split::{split_dataset, Splits};
pub use synthetic::{category_token, generate_synthetic, SyntheticData, SyntheticSpec, Teacher};
pub use vocab::{build_vocab, FieldVocab, VocabBuilder, Vocabulary, OOV_ID};
