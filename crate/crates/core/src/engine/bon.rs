use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::Query;
use crate::answers::CanonicalAnswer;
use crate::backends::Transport;

/// One extracted sample offered to a scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub text: String,
    pub answer: CanonicalAnswer,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("no samples to score")]
    Empty,
    #[error("scorer returned {got} scores for {expected} samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error("score for sample {index} is not a finite number")]
    NonFinite { index: usize },
    #[error("oracle scorer needs a gold answer")]
    MissingGold,
    #[error("remote scorer: {0}")]
    Remote(String),
}

/// Assigns a real-valued score to every sample of one query.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &Query, samples: &[Sample]) -> Result<Vec<f64>, ScorerError>;
}

/// 1 for samples whose answer equals the gold answer, else 0.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, query: &Query, samples: &[Sample]) -> Result<Vec<f64>, ScorerError> {
        let gold = query.gold.as_ref().ok_or(ScorerError::MissingGold)?;
        Ok(samples
            .iter()
            .map(|s| if &s.answer == gold { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Posts `{"query": ..., "samples": [...]}` to `{base_url}/score` and reads
/// `{"scores": [...]}` back.
pub struct RemoteScorer {
    base_url: String,
    api_key_env: Option<String>,
    timeout: Duration,
    transport: Arc<dyn Transport>,
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>, api_key_env: Option<String>, timeout: Duration, transport: Arc<dyn Transport>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env,
            timeout,
            transport,
        }
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, query: &Query, samples: &[Sample]) -> Result<Vec<f64>, ScorerError> {
        #[derive(Deserialize)]
        struct Reply {
            scores: Vec<Option<f64>>,
        }
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| ScorerError::Remote(format!("environment variable {var} is not set")))?;
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let body = json!({
            "query": query.prompt,
            "samples": samples.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        });
        let url = format!("{}/score", self.base_url.trim_end_matches('/'));
        let resp = self
            .transport
            .post_json(&url, &headers, &body, self.timeout)
            .map_err(|e| ScorerError::Remote(format!("{e:?}")))?;
        if !(200..300).contains(&resp.status) {
            return Err(ScorerError::Remote(format!("status {}", resp.status)));
        }
        let reply: Reply = serde_json::from_str(&resp.body).map_err(|e| ScorerError::Remote(e.to_string()))?;
        // JSON has no NaN; a null score is reported as non-finite.
        Ok(reply.scores.into_iter().map(|s| s.unwrap_or(f64::NAN)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonSelection {
    pub answer: CanonicalAnswer,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Answer of the highest-scoring sample; ties go to the earlier sample.
pub fn best_of_n_select(query: &Query, samples: &[Sample], scorer: &dyn Scorer) -> Result<BonSelection, ScorerError> {
    if samples.is_empty() {
        return Err(ScorerError::Empty);
    }
    let scores = scorer.score(query, samples)?;
    if scores.len() != samples.len() {
        return Err(ScorerError::LengthMismatch {
            expected: samples.len(),
            got: scores.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScorerError::NonFinite { index });
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(BonSelection {
        answer: samples[best].answer.clone(),
        index: best,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answers::AnswerKind;
    use crate::backends::{HttpResponse, TransportError};

    struct Fixed(Vec<f64>);

    impl Scorer for Fixed {
        fn score(&self, _: &Query, _: &[Sample]) -> Result<Vec<f64>, ScorerError> {
            Ok(self.0.clone())
        }
    }

    fn samples(answers: &[&str]) -> Vec<Sample> {
        answers
            .iter()
            .map(|a| Sample {
                text: format!("The answer is {a}."),
                answer: CanonicalAnswer::parse(a, AnswerKind::Choice).unwrap(),
                model: "m".into(),
            })
            .collect()
    }

    fn query(gold: Option<&str>) -> Query {
        Query {
            id: "q".into(),
            prompt: "p".into(),
            gold: gold.map(|g| CanonicalAnswer::parse(g, AnswerKind::Choice).unwrap()),
        }
    }

    #[test]
    fn argmax_and_ties() {
        let s = samples(&["A", "B", "A"]);
        let pick = best_of_n_select(&query(None), &s, &Fixed(vec![0.1, 0.9, 0.5])).unwrap();
        assert_eq!((pick.answer.value(), pick.index), ("B", 1));
        let pick = best_of_n_select(&query(None), &s, &Fixed(vec![0.3; 3])).unwrap();
        assert_eq!((pick.answer.value(), pick.index), ("A", 0));
    }

    #[test]
    fn oracle_finds_gold() {
        let s = samples(&["A", "C", "B"]);
        let pick = best_of_n_select(&query(Some("c")), &s, &OracleScorer).unwrap();
        assert_eq!(pick.answer.value(), "C");
        assert_eq!(best_of_n_select(&query(None), &s, &OracleScorer), Err(ScorerError::MissingGold));
    }

    #[test]
    fn scorer_errors() {
        let s = samples(&["A", "B"]);
        assert_eq!(
            best_of_n_select(&query(None), &s, &Fixed(vec![0.1, f64::NAN])),
            Err(ScorerError::NonFinite { index: 1 })
        );
        assert!(matches!(
            best_of_n_select(&query(None), &s, &Fixed(vec![0.1])),
            Err(ScorerError::LengthMismatch { expected: 2, got: 1 })
        ));
        assert_eq!(best_of_n_select(&query(None), &[], &OracleScorer), Err(ScorerError::Empty));
    }

    struct Canned(&'static str);

    impl Transport for Canned {
        fn post_json(&self, url: &str, _: &[(String, String)], body: &serde_json::Value, _: Duration) -> Result<HttpResponse, TransportError> {
            assert!(url.ends_with("/score"));
            assert_eq!(body["samples"].as_array().unwrap().len(), 3);
            Ok(HttpResponse {
                status: 200,
                retry_after: None,
                body: self.0.to_string(),
            })
        }
    }

    #[test]
    fn remote_scorer_wire_format() {
        let s = samples(&["A", "B", "C"]);
        let r = RemoteScorer::new("http://rm.test", None, Duration::from_secs(1), Arc::new(Canned(r#"{"scores":[0.2,0.1,0.7]}"#)));
        assert_eq!(best_of_n_select(&query(None), &s, &r).unwrap().answer.value(), "C");
        let r = RemoteScorer::new("http://rm.test", None, Duration::from_secs(1), Arc::new(Canned(r#"{"scores":[0.2,null,0.7]}"#)));
        assert_eq!(best_of_n_select(&query(None), &s, &r), Err(ScorerError::NonFinite { index: 1 }));
    }
}
