//! JSONL datasets: one `{"id", "query", "gold", "kind"}` object per line.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{AnswerKind, CanonicalAnswer};
use crate::engine::Query;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: gold answer {gold:?} does not canonicalize as {kind}")]
    BadGold { line: usize, gold: String, kind: AnswerKind },
    #[error("line {line}: record kind {record} does not match the ruleset kind {expected}")]
    KindMismatch { line: usize, record: AnswerKind, expected: AnswerKind },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub query: String,
    pub gold: String,
    pub kind: AnswerKind,
}

impl DatasetRecord {
    pub fn canonical_gold(&self) -> Option<CanonicalAnswer> {
        CanonicalAnswer::parse(&self.gold, self.kind)
    }

    /// Prompt from `template`, where `{query}` is replaced by the query text.
    pub fn to_query(&self, template: &str) -> Query {
        Query {
            id: self.id.clone(),
            prompt: template.replace("{query}", &self.query),
            gold: self.canonical_gold(),
        }
    }
}

/// Parses and validates a dataset against the answer kind of the ruleset
/// that will score it. Blank lines are skipped.
pub fn parse_jsonl(text: &str, kind: AnswerKind) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(raw).map_err(|source| DatasetError::Parse { line, source })?;
        if rec.kind != kind {
            return Err(DatasetError::KindMismatch {
                line,
                record: rec.kind,
                expected: kind,
            });
        }
        if rec.canonical_gold().is_none() {
            return Err(DatasetError::BadGold {
                line,
                gold: rec.gold,
                kind,
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: rec.id });
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>, kind: AnswerKind) -> Result<Vec<DatasetRecord>, DatasetError> {
    parse_jsonl(&std::fs::read_to_string(path)?, kind)
}

pub fn to_jsonl(records: &[DatasetRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_validate_and_template() {
        let text = "{\"id\":\"a\",\"query\":\"1+1?\",\"gold\":\"2\",\"kind\":\"numeric\"}\n\n{\"id\":\"b\",\"query\":\"half\",\"gold\":\"\\\\frac{1}{2}\",\"kind\":\"numeric\"}\n";
        let recs = parse_jsonl(text, AnswerKind::Numeric).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].canonical_gold().unwrap().value(), "0.5");
        let q = recs[0].to_query("Q: {query}\nThink step by step.");
        assert_eq!(q.prompt, "Q: 1+1?\nThink step by step.");
        assert_eq!(parse_jsonl(&to_jsonl(&recs), AnswerKind::Numeric).unwrap(), recs);

        assert!(matches!(parse_jsonl(text, AnswerKind::Choice), Err(DatasetError::KindMismatch { line: 1, .. })));
        let dup = format!("{}{}", text, "{\"id\":\"a\",\"query\":\"x\",\"gold\":\"3\",\"kind\":\"numeric\"}\n");
        assert!(matches!(parse_jsonl(&dup, AnswerKind::Numeric), Err(DatasetError::DuplicateId { line: 4, .. })));
        let bad = "{\"id\":\"a\",\"query\":\"x\",\"gold\":\"  \",\"kind\":\"numeric\"}";
        assert!(matches!(parse_jsonl(bad, AnswerKind::Numeric), Err(DatasetError::BadGold { .. })));
        assert!(matches!(parse_jsonl("{oops", AnswerKind::Numeric), Err(DatasetError::Parse { line: 1, .. })));
        assert!(matches!(parse_jsonl("\n", AnswerKind::Numeric), Err(DatasetError::Empty)));
    }
}
