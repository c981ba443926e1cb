//! Per-run results and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report has no rows")]
    Empty,
    #[error("rows disagree on {0}")]
    Inconsistent(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub id: String,
    pub final_answer: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub calls: usize,
    pub exited_at: Option<usize>,
    /// Entropy in bits of the first model's answer histogram.
    pub first_entropy: Option<f64>,
    pub extraction_failures: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: usize,
    pub per_query_calls: Vec<usize>,
    /// Share of the total budget left unspent.
    pub saved_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub budget: usize,
    pub rows: Vec<QueryRow>,
}

/// One CSV line; run-level fields repeat on every row.
#[derive(Serialize, Deserialize)]
struct FlatRow {
    config_digest: String,
    budget: usize,
    id: String,
    final_answer: Option<String>,
    gold: String,
    correct: bool,
    calls: usize,
    exited_at: Option<usize>,
    first_entropy: Option<f64>,
    extraction_failures: usize,
    error: Option<String>,
}

impl RunReport {
    pub fn accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.correct).count() as f64 / self.rows.len() as f64
    }

    pub fn mean_calls(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.calls).sum::<usize>() as f64 / self.rows.len() as f64
    }

    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn ledger(&self) -> BudgetLedger {
        let per_query_calls: Vec<usize> = self.rows.iter().map(|r| r.calls).collect();
        let total = (self.budget * per_query_calls.len()) as f64;
        let used = per_query_calls.iter().sum::<usize>() as f64;
        BudgetLedger {
            budget: self.budget,
            saved_fraction: if total > 0.0 { (total - used) / total } else { 0.0 },
            per_query_calls,
        }
    }

    /// `(first-model entropy, correct as 0/1)` for rows with an entropy.
    pub fn entropy_accuracy_pairs(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.first_entropy.map(|e| (e, if r.correct { 1.0 } else { 0.0 })))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ReportError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(FlatRow {
                config_digest: self.config_digest.clone(),
                budget: self.budget,
                id: r.id.clone(),
                final_answer: r.final_answer.clone(),
                gold: r.gold.clone(),
                correct: r.correct,
                calls: r.calls,
                exited_at: r.exited_at,
                first_entropy: r.first_entropy,
                extraction_failures: r.extraction_failures,
                error: r.error.clone(),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut digest: Option<String> = None;
        let mut budget: Option<usize> = None;
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<FlatRow>() {
            let f = rec?;
            if digest.get_or_insert_with(|| f.config_digest.clone()) != &f.config_digest {
                return Err(ReportError::Inconsistent("config_digest"));
            }
            if *budget.get_or_insert(f.budget) != f.budget {
                return Err(ReportError::Inconsistent("budget"));
            }
            rows.push(QueryRow {
                id: f.id,
                final_answer: f.final_answer,
                gold: f.gold,
                correct: f.correct,
                calls: f.calls,
                exited_at: f.exited_at,
                first_entropy: f.first_entropy,
                extraction_failures: f.extraction_failures,
                error: f.error,
            });
        }
        Ok(Self {
            config_digest: digest.ok_or(ReportError::Empty)?,
            budget: budget.ok_or(ReportError::Empty)?,
            rows,
        })
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, correct: bool, calls: usize, entropy: Option<f64>) -> QueryRow {
        QueryRow {
            id: id.into(),
            final_answer: Some("42".into()),
            gold: "42".into(),
            correct,
            calls,
            exited_at: None,
            first_entropy: entropy,
            extraction_failures: 0,
            error: None,
        }
    }

    #[test]
    fn summary_metrics() {
        let r = RunReport {
            config_digest: "abc".into(),
            budget: 16,
            rows: vec![row("a", true, 8, Some(0.0)), row("b", false, 16, Some(1.0)), row("c", true, 8, None)],
        };
        assert!((r.accuracy() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_calls() - 32.0 / 3.0).abs() < 1e-12);
        let l = r.ledger();
        assert_eq!(l.per_query_calls, vec![8, 16, 8]);
        assert!((l.saved_fraction - 16.0 / 48.0).abs() < 1e-15);
        assert_eq!(r.entropy_accuracy_pairs(), vec![(0.0, 1.0), (1.0, 0.0)]);
    }

    #[test]
    fn empty_csv_is_rejected() {
        assert!(matches!(RunReport::read_csv("".as_bytes()), Err(ReportError::Empty)));
    }

    fn arb_row() -> impl Strategy<Value = QueryRow> {
        (
            "[a-z0-9_-]{1,8}",
            proptest::option::of("[A-Z0-9./ ]{1,6}"),
            "[A-Z0-9./]{1,6}",
            any::<bool>(),
            0usize..64,
            proptest::option::of(0usize..4),
            proptest::option::of(0.0f64..5.0),
            0usize..5,
            proptest::option::of("[a-z ,\"]{1,20}"),
        )
            .prop_map(|(id, final_answer, gold, correct, calls, exited_at, first_entropy, extraction_failures, error)| QueryRow {
                id,
                final_answer,
                gold,
                correct,
                calls,
                exited_at,
                first_entropy,
                extraction_failures,
                error,
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(arb_row(), 1..20), budget in 1usize..100) {
            let report = RunReport { config_digest: "d1g3st".into(), budget, rows };
            let mut buf = Vec::new();
            report.write_csv(&mut buf).unwrap();
            prop_assert_eq!(RunReport::read_csv(buf.as_slice()).unwrap(), report);
        }
    }
}
