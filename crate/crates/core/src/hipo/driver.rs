use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{advance_iteration_with, build_preference_pair, mine_hard_samples_with, HipoConfig, HipoError, HipoState};
use crate::corpus::PreferencePair;
use crate::metrics::MetricKind;

/// A query with its golden answer and the metric used to grade it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HipoQuery {
    pub id: String,
    pub query: String,
    #[serde(alias = "golden")]
    pub golden_answer: String,
    pub metric: MetricKind,
}

/// The model side of the loop: produce scored generations for a set of
/// queries, then (optionally) train on the mined preference pairs.
pub trait CandidateSource {
    type Error;

    fn evaluate(&mut self, iteration: u32, queries: &[&HipoQuery]) -> Result<Vec<super::EvalOutcome>, Self::Error>;

    fn train(&mut self, _iteration: u32, _pairs: &[PreferencePair]) -> Result<(), Self::Error> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HipoRunError<E> {
    #[error("candidate source failed: {0}")]
    Source(E),
    #[error(transparent)]
    Hipo(#[from] HipoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub evaluated: usize,
    pub mean_score: f64,
    pub hard: Vec<String>,
    pub pairs: Vec<PreferencePair>,
    /// Hard queries for which every generation matched the golden answer.
    pub unpaired: Vec<String>,
    pub newly_resolved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HipoRun {
    pub iterations: Vec<IterationRecord>,
    pub state: HipoState,
}

/// Runs up to `max_iterations` rounds, stopping early once no query is active.
pub fn run_hipo<S: CandidateSource>(
    queries: &[HipoQuery],
    source: &mut S,
    cfg: &HipoConfig,
    max_iterations: u32,
) -> Result<HipoRun, HipoRunError<S::Error>> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &HipoQuery> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut state = HipoState::new(queries.iter().map(|q| q.id.clone()));
    let mut iterations = Vec::new();

    while !state.is_done() && state.iteration < max_iterations {
        let active: Vec<&HipoQuery> = state.active.iter().map(|id| by_id[id.as_str()]).collect();
        let outcomes = source.evaluate(state.iteration, &active).map_err(HipoRunError::Source)?;
        for o in &outcomes {
            o.validate()?;
        }
        let hard = mine_hard_samples_with(&outcomes, cfg);
        let mut pairs = Vec::new();
        let mut unpaired = Vec::new();
        for o in outcomes.iter().filter(|o| hard.contains(&o.query_id)) {
            let Some(q) = by_id.get(o.query_id.as_str()) else { continue };
            match build_preference_pair(&q.query, &q.golden_answer, o)? {
                Some(p) => pairs.push(p),
                None => unpaired.push(o.query_id.clone()),
            }
        }
        let next = advance_iteration_with(&state, &outcomes, cfg)?;
        source.train(state.iteration, &pairs).map_err(HipoRunError::Source)?;

        let mean_score = if outcomes.is_empty() { 0.0 } else { outcomes.iter().map(|o| o.score).sum::<f64>() / outcomes.len() as f64 };
        iterations.push(IterationRecord {
            iteration: state.iteration,
            evaluated: outcomes.len(),
            mean_score,
            hard: hard.into_iter().collect(),
            pairs,
            unpaired,
            newly_resolved: next.resolved.difference(&state.resolved).cloned().collect(),
        });
        state = next;
    }
    Ok(HipoRun { iterations, state })
}
