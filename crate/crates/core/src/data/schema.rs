use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numerical,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "categorical" => Ok(Self::Categorical),
            "numerical" => Ok(Self::Numerical),
            other => Err(Error::InvalidArgument(format!("unknown field kind {other:?}"))),
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Categorical => "categorical",
            Self::Numerical => "numerical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    /// Zero-based field position.
    pub index: usize,
}

/// Ordered list of fields; indices are `0..N` in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    fields: Vec<FieldSchema>,
}

impl Schema {
    pub fn new<S: Into<String>>(fields: impl IntoIterator<Item = (S, FieldKind)>) -> Result<Self> {
        let fields: Vec<FieldSchema> = fields
            .into_iter()
            .enumerate()
            .map(|(index, (name, kind))| FieldSchema {
                name: name.into(),
                kind,
                index,
            })
            .collect();
        let mut names: Vec<&str> = fields.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate field name in schema".into()));
        }
        if fields.is_empty() {
            return Err(Error::InvalidArgument("schema has no fields".into()));
        }
        Ok(Self { fields })
    }

    /// The 13 numerical + 26 categorical layout of the Criteo display-ad logs.
    pub fn criteo() -> Self {
        let numeric = (1..=13).map(|i| (format!("I{i}"), FieldKind::Numerical));
        let categorical = (1..=26).map(|i| (format!("C{i}"), FieldKind::Categorical));
        Self::new(numeric.chain(categorical)).expect("static schema is valid")
    }

    pub fn all_categorical(n: usize) -> Self {
        Self::new((0..n).map(|i| (format!("f{i}"), FieldKind::Categorical)))
            .expect("generated names are unique")
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FieldSchema] {
        &self.fields
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Parses `name kind` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(kind), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `<name> <kind>`, got {line:?}"),
                });
            };
            let kind = kind.parse().map_err(|e: Error| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            fields.push((name.to_string(), kind));
        }
        Self::new(fields)
    }

    pub fn to_text(&self) -> String {
        self.fields
            .iter()
            .map(|f| format!("{} {}\n", f.name, f.kind))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let s = Schema::criteo();
        assert_eq!(s.len(), 39);
        assert_eq!(Schema::parse(&s.to_text()).unwrap(), s);
        assert_eq!(s.fields()[13].name, "C1");
        assert_eq!(s.fields()[38].index, 38);
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = Schema::parse("# header\na categorical\nb weird\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(Schema::parse("a categorical\na numerical\n").is_err());
    }
}
