//! Raw records, quantized instances and the two on-disk input formats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::discretize::{discretize_numeric, parse_numeric};
use super::schema::{FieldKind, Schema};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub label: u8,
    pub tokens: Vec<String>,
}

/// One quantized sample: a category ID per field plus the label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub label: u8,
    pub x: Vec<u32>,
}

/// The vocabulary key for a raw token of the given field kind.
pub(crate) fn field_token(kind: FieldKind, raw: &str) -> Result<String> {
    match kind {
        FieldKind::Categorical => Ok(raw.to_string()),
        FieldKind::Numerical => Ok(discretize_numeric(parse_numeric(raw)?).to_string()),
    }
}

/// Maps each field through discretization (numerical fields) and the
/// vocabulary; unknown tokens land on the field's OOV ID.
pub fn quantize(record: &RawRecord, schema: &Schema, vocab: &Vocabulary) -> Result<Instance> {
    if record.tokens.len() != schema.len() || vocab.fields().len() != schema.len() {
        return Err(Error::InvalidArgument(format!(
            "arity mismatch: record {} tokens, schema {} fields, vocabulary {} fields",
            record.tokens.len(),
            schema.len(),
            vocab.fields().len()
        )));
    }
    let x = schema
        .fields()
        .iter()
        .zip(&record.tokens)
        .zip(vocab.fields())
        .map(|((f, raw), fv)| field_token(f.kind, raw).map(|t| fv.id(&t)))
        .collect::<Result<Vec<u32>>>()?;
    Ok(Instance {
        label: record.label,
        x,
    })
}

pub fn quantize_all(records: &[RawRecord], schema: &Schema, vocab: &Vocabulary) -> Result<Vec<Instance>> {
    records.iter().map(|r| quantize(r, schema, vocab)).collect()
}

fn parse_label(s: &str, line: usize) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            line,
            msg: format!("label must be 0 or 1, got {other:?}"),
        }),
    }
}

/// Reads tab-separated Criteo-style lines: label, 13 numeric, 26 categorical.
pub fn read_criteo<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let schema_len = Schema::criteo().len();
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.len() != schema_len + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, got {}", schema_len + 1, row.len()),
            });
        }
        let label = parse_label(&row[0], line)?;
        let tokens = row.iter().skip(1).map(str::to_string).collect();
        out.push(RawRecord { label, tokens });
    }
    Ok(out)
}

/// Reads comma-separated records with a `label,<field>...` header; columns
/// are matched to the schema by name.
pub fn read_generic<R: Read>(reader: R, schema: &Schema) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header has no `label` column".into(),
        })?;
    let cols = schema
        .fields()
        .iter()
        .map(|f| {
            header.iter().position(|h| h == f.name).ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("header lacks field {:?}", f.name),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let label = parse_label(&row[label_col], i + 2)?;
        let tokens = cols.iter().map(|&c| row[c].to_string()).collect();
        out.push(RawRecord { label, tokens });
    }
    Ok(out)
}

/// Writes records in the generic comma-separated format.
pub fn write_generic<W: Write>(writer: W, schema: &Schema, records: &[RawRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend(schema.fields().iter().map(|f| f.name.clone()));
    wtr.write_record(&header)?;
    for r in records {
        let mut row = Vec::with_capacity(r.tokens.len() + 1);
        row.push(r.label.to_string());
        row.extend(r.tokens.iter().cloned());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, OOV_ID};

    fn rec(label: u8, tokens: &[&str]) -> RawRecord {
        RawRecord {
            label,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn hand_corpus_quantizes_to_hand_ids() {
        // field "site" (categorical), field "cnt" (numerical)
        // site: b(1st), a(2nd) -> ids b=1, a=2
        // cnt : 100 -> 21, 1 -> 1, "" -> missing; first seen 21, 1, missing -> 1, 2, 3
        let schema = Schema::new([("site", FieldKind::Categorical), ("cnt", FieldKind::Numerical)]).unwrap();
        let corpus = vec![rec(1, &["b", "100"]), rec(0, &["a", "1"]), rec(0, &["b", ""])];
        let vocab = build_vocab(&corpus, &schema, 1).unwrap();
        let ids: Vec<Vec<u32>> = corpus
            .iter()
            .map(|r| quantize(r, &schema, &vocab).unwrap().x)
            .collect();
        assert_eq!(ids, vec![vec![1, 1], vec![2, 2], vec![1, 3]]);
        // 2 and 1.5 share the x <= 2 bucket with 1
        assert_eq!(quantize(&rec(0, &["a", "2"]), &schema, &vocab).unwrap().x, vec![2, 2]);
        assert_eq!(vocab.sizes(), vec![3, 4]);
    }

    #[test]
    fn unseen_tokens_map_to_oov() {
        let schema = Schema::all_categorical(3);
        let vocab = build_vocab(&[rec(0, &["a", "b", "c"])], &schema, 1).unwrap();
        let inst = quantize(&rec(1, &["x", "y", "z"]), &schema, &vocab).unwrap();
        assert_eq!(inst.x, vec![OOV_ID; 3]);
        assert_eq!(inst.label, 1);
    }

    #[test]
    fn arity_and_parse_errors() {
        let schema = Schema::new([("n", FieldKind::Numerical)]).unwrap();
        let vocab = build_vocab(&[rec(0, &["3"])], &schema, 1).unwrap();
        assert!(quantize(&rec(0, &["3", "4"]), &schema, &vocab).is_err());
        assert!(quantize(&rec(0, &["abc"]), &schema, &vocab).is_err());
    }

    #[test]
    fn generic_format_round_trip_and_column_matching() {
        let schema = Schema::all_categorical(2);
        let records = vec![rec(1, &["a", "b"]), rec(0, &["", "c,d"])];
        let mut buf = Vec::new();
        write_generic(&mut buf, &schema, &records).unwrap();
        assert_eq!(read_generic(&buf[..], &schema).unwrap(), records);

        let reordered = "f1,label,f0\nq,1,p\n";
        let got = read_generic(reordered.as_bytes(), &schema).unwrap();
        assert_eq!(got, vec![rec(1, &["p", "q"])]);
        assert!(read_generic("f0,f1\na,b\n".as_bytes(), &schema).is_err());
        assert!(read_generic("label,f0,f1\n2,a,b\n".as_bytes(), &schema).is_err());
    }

    #[test]
    fn criteo_lines() {
        let mut line = String::from("1");
        for i in 0..13 {
            line.push('\t');
            if i != 4 {
                line.push_str(&(i * 10).to_string());
            }
        }
        for i in 0..26 {
            line.push('\t');
            line.push_str(&format!("{:08x}", i));
        }
        let text = format!("{line}\n{line}\n");
        let recs = read_criteo(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].tokens.len(), 39);
        assert_eq!(recs[0].tokens[4], "");
        assert!(read_criteo("1\t2\t3\n".as_bytes()).is_err());

        let schema = Schema::criteo();
        let vocab = build_vocab(&recs, &schema, 1).unwrap();
        let inst = quantize(&recs[0], &schema, &vocab).unwrap();
        assert!(inst.x.iter().zip(vocab.sizes()).all(|(&id, n)| (id as usize) < n));
    }
}
