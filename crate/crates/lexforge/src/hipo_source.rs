//! HIPO candidate generation against a chat endpoint.

use lexforge_core::corpus::PreferencePair;
use lexforge_core::hipo::{CandidateSource, EvalOutcome, Generation, HipoQuery};
use lexforge_core::metrics::{self, MetricKind, MetricOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::stable_hash;
use crate::inference::{batch_complete, ChatBackend, ChatRequest, EndpointConfig, InferenceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub samples_per_query: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { samples_per_query: 4, temperature: 0.8, max_tokens: 512 }
    }
}

/// Per-generation score in [0, 1]. Generations the metric cannot read (a
/// non-numeric answer under NLD, say) score 0.
pub fn grade(kind: MetricKind, generation: &str, golden: &str, opts: &MetricOptions) -> f64 {
    let wrap = |s: &str| match kind {
        MetricKind::SoftF1 => Value::Array(vec![Value::String(s.to_string())]),
        _ => Value::String(s.to_string()),
    };
    match metrics::score(kind, &wrap(generation), &wrap(golden), opts) {
        Ok(s) => s.clamp(0.0, 1.0),
        Err(e) => {
            log::debug!("ungradable generation under {kind}: {e}");
            0.0
        }
    }
}

/// Samples each active query from the endpoint and grades the answers
/// against the golden answer.
///
/// The endpoint cannot be trained from here: mined pairs are collected in
/// `emitted` for an external trainer.
pub struct EndpointSource<'a> {
    backend: &'a dyn ChatBackend,
    endpoint: &'a EndpointConfig,
    settings: GenerationSettings,
    metric_options: MetricOptions,
    seed: u64,
    pub emitted: Vec<(u32, PreferencePair)>,
}

impl<'a> EndpointSource<'a> {
    pub fn new(backend: &'a dyn ChatBackend, endpoint: &'a EndpointConfig, settings: GenerationSettings, metric_options: MetricOptions, seed: u64) -> Self {
        Self { backend, endpoint, settings, metric_options, seed, emitted: Vec::new() }
    }

    fn request(&self, iteration: u32, q: &HipoQuery, k: usize) -> ChatRequest {
        let mut req = ChatRequest::user(&self.endpoint.model, &q.query);
        req.temperature = self.settings.temperature;
        req.max_tokens = self.settings.max_tokens;
        req.seed = Some(stable_hash(&[
            &self.seed.to_le_bytes(),
            &iteration.to_le_bytes(),
            q.id.as_bytes(),
            &(k as u64).to_le_bytes(),
        ]));
        req
    }
}

impl CandidateSource for EndpointSource<'_> {
    type Error = InferenceError;

    fn evaluate(&mut self, iteration: u32, queries: &[&HipoQuery]) -> Result<Vec<EvalOutcome>, InferenceError> {
        let n = self.settings.samples_per_query.max(1);
        let requests: Vec<ChatRequest> = queries.iter().flat_map(|q| (0..n).map(move |k| (q, k))).map(|(q, k)| self.request(iteration, q, k)).collect();
        let mut replies = batch_complete(self.backend, &requests, self.endpoint).into_iter();
        let mut outcomes = Vec::with_capacity(queries.len());
        for q in queries {
            let mut generations = Vec::with_capacity(n);
            let mut last_error = None;
            for reply in replies.by_ref().take(n) {
                match reply {
                    Ok(c) => {
                        let text = c.content.trim().to_string();
                        let score = grade(q.metric, &text, &q.golden_answer, &self.metric_options);
                        generations.push(Generation { text, score });
                    }
                    Err(e) => last_error = Some(e),
                }
            }
            if generations.is_empty() {
                return Err(last_error.unwrap_or(InferenceError::Decode(format!("no generations for {}", q.id))));
            }
            let outcome = EvalOutcome::from_generations(q.id.clone(), q.metric, generations)
                .map_err(|e| InferenceError::Decode(e.to_string()))?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    fn train(&mut self, iteration: u32, pairs: &[PreferencePair]) -> Result<(), InferenceError> {
        self.emitted.extend(pairs.iter().cloned().map(|p| (iteration, p)));
        Ok(())
    }
}
