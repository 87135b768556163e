//! Per-field vocabularies with a frequency threshold and an OOV bucket.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{field_token, RawRecord};
use super::schema::Schema;
use crate::error::{Error, Result};

/// ID reserved in every field for rare and unseen tokens.
pub const OOV_ID: u32 = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldVocab {
    pub name: String,
    ids: HashMap<String, u32>,
    /// Kept tokens in ID order; token `i` has ID `i + 1`.
    tokens: Vec<String>,
}

impl FieldVocab {
    fn from_tokens(name: String, tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self { name, ids, tokens }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    /// Number of IDs including the OOV slot.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub min_freq: u64,
    fields: Vec<FieldVocab>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_freq: u64,
    fields: Vec<VocabFileField>,
}

#[derive(Serialize, Deserialize)]
struct VocabFileField {
    name: String,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::size).collect()
    }

    pub fn total_ids(&self) -> u64 {
        self.fields.iter().map(|f| f.size() as u64).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            min_freq: self.min_freq,
            fields: self
                .fields
                .iter()
                .map(|f| VocabFileField {
                    name: f.name.clone(),
                    tokens: f.tokens.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        Ok(Self {
            min_freq: file.min_freq,
            fields: file
                .fields
                .into_iter()
                .map(|f| FieldVocab::from_tokens(f.name, f.tokens))
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, Default)]
struct TokenStat {
    count: u64,
    first_seen: u64,
}

/// Mergeable token counts; finishing applies the frequency threshold.
///
/// Shards built with [`VocabBuilder::with_offset`] over disjoint,
/// consecutive record ranges merge into exactly the sequential result.
#[derive(Clone, Debug)]
pub struct VocabBuilder {
    schema: Schema,
    counts: Vec<HashMap<String, TokenStat>>,
    next_record: u64,
}

impl VocabBuilder {
    pub fn new(schema: &Schema) -> Self {
        Self::with_offset(schema, 0)
    }

    /// Builder whose first observed record has global position `offset`.
    pub fn with_offset(schema: &Schema, offset: u64) -> Self {
        Self {
            schema: schema.clone(),
            counts: vec![HashMap::new(); schema.len()],
            next_record: offset,
        }
    }

    pub fn observe(&mut self, record: &RawRecord) -> Result<()> {
        if record.tokens.len() != self.schema.len() {
            return Err(Error::InvalidArgument(format!(
                "record has {} tokens, schema has {} fields",
                record.tokens.len(),
                self.schema.len()
            )));
        }
        let pos = self.next_record;
        for (field, raw) in self.schema.fields().iter().zip(&record.tokens) {
            let token = field_token(field.kind, raw)?;
            let stat = self.counts[field.index]
                .entry(token)
                .or_insert(TokenStat { count: 0, first_seen: pos });
            stat.count += 1;
        }
        self.next_record += 1;
        Ok(())
    }

    pub fn merge(mut self, other: VocabBuilder) -> Self {
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            for (tok, st) in theirs {
                let e = mine.entry(tok).or_insert(TokenStat {
                    count: 0,
                    first_seen: st.first_seen,
                });
                e.count += st.count;
                e.first_seen = e.first_seen.min(st.first_seen);
            }
        }
        self.next_record = self.next_record.max(other.next_record);
        self
    }

    /// Keeps tokens with `count >= min_freq`, numbered by first occurrence.
    pub fn finish(self, min_freq: u64) -> Vocabulary {
        let fields = self
            .schema
            .fields()
            .iter()
            .zip(self.counts)
            .map(|(f, counts)| {
                let mut kept: Vec<(String, TokenStat)> =
                    counts.into_iter().filter(|(_, s)| s.count >= min_freq).collect();
                kept.sort_by(|a, b| a.1.first_seen.cmp(&b.1.first_seen).then_with(|| a.0.cmp(&b.0)));
                FieldVocab::from_tokens(f.name.clone(), kept.into_iter().map(|(t, _)| t).collect())
            })
            .collect();
        Vocabulary { min_freq, fields }
    }
}

pub fn build_vocab(records: &[RawRecord], schema: &Schema, min_freq: u64) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot build a vocabulary from no records".into()));
    }
    let mut b = VocabBuilder::new(schema);
    for r in records {
        b.observe(r)?;
    }
    Ok(b.finish(min_freq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldKind;

    fn rec(tokens: &[&str]) -> RawRecord {
        RawRecord {
            label: 0,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let schema = Schema::all_categorical(1);
        let mut records: Vec<RawRecord> = (0..9).map(|_| rec(&["nine"])).collect();
        records.extend((0..10).map(|_| rec(&["ten"])));
        let v = build_vocab(&records, &schema, 10).unwrap();
        assert_eq!(v.fields()[0].id("nine"), OOV_ID);
        assert_eq!(v.fields()[0].id("ten"), 1);
        assert_eq!(v.sizes(), vec![2]);
    }

    #[test]
    fn min_freq_one_keeps_everything_seen() {
        let schema = Schema::all_categorical(2);
        let records = vec![rec(&["a", "x"]), rec(&["b", "x"]), rec(&["a", "y"])];
        let v = build_vocab(&records, &schema, 1).unwrap();
        assert_eq!(v.fields()[0].id("a"), 1);
        assert_eq!(v.fields()[0].id("b"), 2);
        assert_eq!(v.fields()[1].id("y"), 2);
        assert_eq!(v.fields()[1].id("never"), OOV_ID);
    }

    #[test]
    fn sharded_counts_merge_to_sequential_result() {
        let schema = Schema::new([("c", FieldKind::Categorical), ("n", FieldKind::Numerical)]).unwrap();
        let records: Vec<RawRecord> = (0..40)
            .map(|i| rec(&[&format!("t{}", (i * 7) % 5), &format!("{}", i * 3)]))
            .collect();
        let seq = build_vocab(&records, &schema, 2).unwrap();
        let mut a = VocabBuilder::with_offset(&schema, 0);
        let mut b = VocabBuilder::with_offset(&schema, 17);
        records[..17].iter().for_each(|r| a.observe(r).unwrap());
        records[17..].iter().for_each(|r| b.observe(r).unwrap());
        // merge order must not matter
        assert_eq!(b.clone().merge(a.clone()).finish(2), seq);
        assert_eq!(a.merge(b).finish(2), seq);
    }

    #[test]
    fn json_round_trip() {
        let schema = Schema::all_categorical(2);
        let records = vec![rec(&["a", "x"]), rec(&["b", "x"])];
        let v = build_vocab(&records, &schema, 1).unwrap();
        assert_eq!(Vocabulary::from_json(&v.to_json().unwrap()).unwrap(), v);
    }
}
