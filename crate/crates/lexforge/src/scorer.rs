//! Judge-based quality scoring over an inference backend.

use lexforge_core::corpus::Document;
use lexforge_core::scoring::{self, ScoringError};
use serde::{Deserialize, Serialize};

use crate::inference::{batch_complete, ChatBackend, ChatRequest, EndpointConfig};
use crate::io::DocRecord;

const JUDGE_MAX_TOKENS: u32 = 256;

pub fn scoring_request(text: &str, model: &str) -> Result<ChatRequest, ScoringError> {
    let mut req = ChatRequest::user(model, scoring::build_scoring_prompt(text)?);
    req.max_tokens = JUDGE_MAX_TOKENS;
    Ok(req)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringStats {
    pub input: usize,
    pub selected: usize,
    pub scored: usize,
    pub failed: usize,
    /// Count of documents per score 0..=5.
    pub histogram: [usize; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringRun {
    /// One record per selected document, in input order. Failed documents
    /// carry `score_error` and no score.
    pub records: Vec<DocRecord>,
    pub stats: ScoringStats,
}

impl ScoringRun {
    /// Documents that received a score.
    pub fn scored_documents(&self) -> Vec<Document> {
        self.records
            .iter()
            .filter(|r| r.score.is_some())
            .map(|r| r.clone().into_document(&Default::default()))
            .collect()
    }
}

/// Scores `docs`, or a seeded sample of `sample_n` of them.
pub fn score_corpus(
    docs: &[Document],
    backend: &dyn ChatBackend,
    endpoint: &EndpointConfig,
    sample_n: Option<usize>,
    seed: u64,
) -> ScoringRun {
    let selected = match sample_n {
        Some(n) => scoring::select_sample(docs.len(), n, seed),
        None => (0..docs.len()).collect(),
    };
    let mut stats = ScoringStats { input: docs.len(), selected: selected.len(), ..Default::default() };

    // Requests only for documents with a usable prompt; the rest fail locally.
    let prepared: Vec<Result<ChatRequest, ScoringError>> =
        selected.iter().map(|&i| scoring_request(&docs[i].text, &endpoint.model)).collect();
    let requests: Vec<ChatRequest> = prepared.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let mut replies = batch_complete(backend, &requests, endpoint).into_iter();

    let mut records = Vec::with_capacity(selected.len());
    for (&i, prep) in selected.iter().zip(prepared) {
        let mut rec = DocRecord::from(&docs[i]);
        rec.score = None;
        let outcome = prep.map_err(|e| e.to_string()).and_then(|_| {
            let reply = replies.next().expect("one reply per request").map_err(|e| e.to_string())?;
            scoring::parse_judgement(&reply.content).map_err(|e| format!("{e} in judge reply"))
        });
        match outcome {
            Ok((score, rationale)) => {
                stats.scored += 1;
                stats.histogram[score as usize] += 1;
                rec.score = Some(score);
                rec.rationale = rationale;
            }
            Err(e) => {
                log::warn!("document {} left unscored: {e}", rec.id);
                stats.failed += 1;
                rec.score_error = Some(e);
            }
        }
        records.push(rec);
    }
    ScoringRun { records, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{InferenceError, MockBackend, RetryPolicy};
    use lexforge_core::corpus::{CounterConfig, Lang, Source};

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("d{i}"), format!("document number {i}"), Lang::En, Source::GeneralIndustry, &CounterConfig::default()))
            .collect()
    }

    fn endpoint() -> EndpointConfig {
        EndpointConfig { retry: RetryPolicy { max_attempts: 2, initial_backoff_ms: 1, multiplier: 1.0, max_backoff_ms: 1 }, ..EndpointConfig::mock() }
    }

    #[test]
    fn mock_passthrough() {
        let run = score_corpus(&docs(3), &MockBackend::fixed("4"), &endpoint(), None, 0);
        assert!(run.records.iter().all(|r| r.score == Some(4)));
        assert_eq!(run.stats.histogram[4], 3);
    }

    #[test]
    fn sample_is_seeded() {
        let d = docs(5);
        let ids = |seed| -> Vec<String> {
            score_corpus(&d, &MockBackend::fixed("4"), &endpoint(), Some(2), seed).records.into_iter().map(|r| r.id).collect()
        };
        assert_eq!(ids(7).len(), 2);
        assert_eq!(ids(7), ids(7));
    }

    #[test]
    fn failures_are_marked_not_scored() {
        let mut d = docs(3);
        d[1].text = "   ".into();
        let backend = MockBackend::new(|req| {
            if req.last_user_content().contains("number 2") {
                Err(InferenceError::Endpoint { status: 503, body: String::new() })
            } else {
                Ok(crate::inference::Completion { content: "Score: 9".into(), logprob: None })
            }
        });
        let run = score_corpus(&d, &backend, &endpoint(), None, 0);
        assert_eq!(run.stats.failed, 3);
        assert!(run.records.iter().all(|r| r.score.is_none() && r.score_error.is_some()));
        assert!(run.scored_documents().is_empty());
    }
}
