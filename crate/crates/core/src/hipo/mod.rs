//! Hard-sample iterative preference optimization.
//!
//! Each round evaluates the current policy on the still-active queries,
//! keeps those scoring under the threshold as hard samples, pairs their
//! golden answers with the weakest distinct generation, and retires queries
//! that now pass. Loss functions evaluate the objective from sequence
//! log-probabilities supplied by the caller.

mod driver;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PreferencePair;
use crate::metrics::MetricKind;

pub use driver::{run_hipo, CandidateSource, HipoQuery, HipoRun, HipoRunError, IterationRecord};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_NLL_LAMBDA: f64 = 0.1;
pub const EXACT_MATCH_THRESHOLD: f64 = 1.0;
pub const CONTINUOUS_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HipoError {
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("{0} is a log-probability and must be <= 0")]
    PositiveLogProb(&'static str),
    #[error("chosen_token_count must be at least 1")]
    ZeroTokens,
    #[error("query `{0}` has no generations")]
    NoGenerations(String),
    #[error("no outcome for active query `{0}`")]
    MissingOutcome(String),
    #[error("score {score} for query `{query_id}` is outside [0, 1]")]
    ScoreOutOfRange { query_id: String, score: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub query_id: String,
    pub metric_kind: MetricKind,
    pub score: f64,
    pub generations: Vec<Generation>,
}

impl EvalOutcome {
    /// Outcome whose score is the mean generation score.
    pub fn from_generations(query_id: impl Into<String>, metric_kind: MetricKind, generations: Vec<Generation>) -> Result<Self, HipoError> {
        let query_id = query_id.into();
        if generations.is_empty() {
            return Err(HipoError::NoGenerations(query_id));
        }
        let score = generations.iter().map(|g| g.score).sum::<f64>() / generations.len() as f64;
        let out = Self { query_id, metric_kind, score, generations };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), HipoError> {
        let bad = |score: f64| HipoError::ScoreOutOfRange { query_id: self.query_id.clone(), score };
        if !(0.0..=1.0).contains(&self.score) {
            return Err(bad(self.score));
        }
        if let Some(g) = self.generations.iter().find(|g| !(0.0..=1.0).contains(&g.score)) {
            return Err(bad(g.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllNormalization {
    /// Divide by the chosen response's token count.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HipoConfig {
    pub beta: f64,
    pub nll_lambda: f64,
    /// Overrides the per-metric default threshold when set.
    pub hard_threshold: Option<f64>,
    pub nll_normalization: NllNormalization,
}

impl Default for HipoConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA, nll_lambda: DEFAULT_NLL_LAMBDA, hard_threshold: None, nll_normalization: NllNormalization::Mean }
    }
}

impl HipoConfig {
    pub fn validate(&self) -> Result<(), HipoError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(HipoError::InvalidConfig("beta must be positive"));
        }
        if !(self.nll_lambda >= 0.0) || !self.nll_lambda.is_finite() {
            return Err(HipoError::InvalidConfig("nll_lambda must be non-negative"));
        }
        if let Some(t) = self.hard_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(HipoError::InvalidConfig("hard_threshold must be in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn threshold_for(&self, kind: MetricKind) -> f64 {
        self.hard_threshold.unwrap_or_else(|| default_threshold(kind))
    }
}

pub fn default_threshold(kind: MetricKind) -> f64 {
    if kind.is_exact_match() {
        EXACT_MATCH_THRESHOLD
    } else {
        CONTINUOUS_THRESHOLD
    }
}

/// Queries scoring strictly below `tau`.
pub fn mine_hard_samples(outcomes: &[EvalOutcome], tau: f64) -> BTreeSet<String> {
    outcomes.iter().filter(|o| o.score < tau).map(|o| o.query_id.clone()).collect()
}

/// Like [`mine_hard_samples`] with the threshold chosen per metric kind.
pub fn mine_hard_samples_with(outcomes: &[EvalOutcome], cfg: &HipoConfig) -> BTreeSet<String> {
    outcomes.iter().filter(|o| o.score < cfg.threshold_for(o.metric_kind)).map(|o| o.query_id.clone()).collect()
}

/// Golden answer versus the lowest-scoring generation that differs from it
/// (first one on ties). `None` when every generation reproduces the golden
/// answer.
pub fn build_preference_pair(query: &str, golden: &str, outcome: &EvalOutcome) -> Result<Option<PreferencePair>, HipoError> {
    if outcome.generations.is_empty() {
        return Err(HipoError::NoGenerations(outcome.query_id.clone()));
    }
    let worst = outcome
        .generations
        .iter()
        .filter(|g| g.text != golden && !g.text.is_empty())
        .fold(None::<&Generation>, |best, g| match best {
            Some(b) if b.score <= g.score => Some(b),
            _ => Some(g),
        });
    Ok(worst.and_then(|g| PreferencePair::new(query, golden, g.text.as_str()).ok()))
}

/// Sequence log-probabilities of the chosen (`w`) and rejected (`l`)
/// responses under the policy and the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbQuad {
    pub policy_logp_chosen: f64,
    pub policy_logp_rejected: f64,
    pub ref_logp_chosen: f64,
    pub ref_logp_rejected: f64,
    pub chosen_token_count: u32,
}

impl LogProbQuad {
    pub fn validate(&self) -> Result<(), HipoError> {
        for (name, v) in [
            ("policy_logp_chosen", self.policy_logp_chosen),
            ("policy_logp_rejected", self.policy_logp_rejected),
            ("ref_logp_chosen", self.ref_logp_chosen),
            ("ref_logp_rejected", self.ref_logp_rejected),
        ] {
            if !v.is_finite() {
                return Err(HipoError::NonFinite(name));
            }
            if v > 0.0 {
                return Err(HipoError::PositiveLogProb(name));
            }
        }
        if self.chosen_token_count == 0 {
            return Err(HipoError::ZeroTokens);
        }
        Ok(())
    }

    /// Difference of the chosen and rejected log-ratios against the reference.
    pub fn margin(&self) -> f64 {
        (self.policy_logp_chosen - self.ref_logp_chosen) - (self.policy_logp_rejected - self.ref_logp_rejected)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn check_beta(beta: f64) -> Result<(), HipoError> {
    if !beta.is_finite() {
        return Err(HipoError::NonFinite("beta"));
    }
    if beta <= 0.0 {
        return Err(HipoError::InvalidConfig("beta must be positive"));
    }
    Ok(())
}

/// `−ln σ(β·h)` evaluated as `softplus(−β·h)`.
pub fn dpo_loss(quad: &LogProbQuad, beta: f64) -> Result<f64, HipoError> {
    quad.validate()?;
    check_beta(beta)?;
    Ok(softplus(-beta * quad.margin()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoGradient {
    pub policy_logp_chosen: f64,
    pub policy_logp_rejected: f64,
}

/// Partial derivatives of [`dpo_loss`] with respect to the policy terms.
pub fn dpo_gradient(quad: &LogProbQuad, beta: f64) -> Result<DpoGradient, HipoError> {
    quad.validate()?;
    check_beta(beta)?;
    let g = beta * sigmoid(-beta * quad.margin());
    Ok(DpoGradient { policy_logp_chosen: -g, policy_logp_rejected: g })
}

pub fn nll(quad: &LogProbQuad, normalization: NllNormalization) -> f64 {
    match normalization {
        NllNormalization::Mean => -quad.policy_logp_chosen / f64::from(quad.chosen_token_count),
        NllNormalization::Sum => -quad.policy_logp_chosen,
    }
}

/// `λ·NLL(chosen) + dpo_loss`. With `λ = 0` the result is exactly the DPO term.
pub fn hipo_loss(quad: &LogProbQuad, cfg: &HipoConfig) -> Result<f64, HipoError> {
    let dpo = dpo_loss(quad, cfg.beta)?;
    if cfg.nll_lambda == 0.0 {
        return Ok(dpo);
    }
    if !(cfg.nll_lambda > 0.0) || !cfg.nll_lambda.is_finite() {
        return Err(HipoError::InvalidConfig("nll_lambda must be non-negative"));
    }
    Ok(cfg.nll_lambda * nll(quad, cfg.nll_normalization) + dpo)
}

/// Which model serves as the frozen reference in the next round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "iteration")]
pub enum ReferencePolicy {
    /// The model that entered the loop.
    #[default]
    Initial,
    /// The policy produced by the given iteration.
    Iteration(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HipoState {
    pub iteration: u32,
    pub active: BTreeSet<String>,
    pub resolved: BTreeSet<String>,
    #[serde(default)]
    pub reference_policy: ReferencePolicy,
}

impl HipoState {
    pub fn new<I, S>(query_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            iteration: 0,
            active: query_ids.into_iter().map(Into::into).collect(),
            resolved: BTreeSet::new(),
            reference_policy: ReferencePolicy::Initial,
        }
    }

    pub fn is_done(&self) -> bool {
        self.active.is_empty()
    }

    pub fn all_queries(&self) -> BTreeSet<String> {
        self.active.union(&self.resolved).cloned().collect()
    }
}

fn advance(state: &HipoState, outcomes: &[EvalOutcome], tau: &dyn Fn(&EvalOutcome) -> f64) -> Result<HipoState, HipoError> {
    let by_id: BTreeMap<&str, &EvalOutcome> = outcomes.iter().map(|o| (o.query_id.as_str(), o)).collect();
    let mut next = HipoState {
        iteration: state.iteration + 1,
        active: BTreeSet::new(),
        resolved: state.resolved.clone(),
        reference_policy: ReferencePolicy::Iteration(state.iteration),
    };
    for q in &state.active {
        let o = by_id.get(q.as_str()).ok_or_else(|| HipoError::MissingOutcome(q.clone()))?;
        if o.score >= tau(o) {
            next.resolved.insert(q.clone());
        } else {
            next.active.insert(q.clone());
        }
    }
    Ok(next)
}

/// Moves active queries scoring at least `tau` to the resolved set.
/// Outcomes for queries that are not active are ignored.
pub fn advance_iteration(state: &HipoState, outcomes: &[EvalOutcome], tau: f64) -> Result<HipoState, HipoError> {
    advance(state, outcomes, &|_| tau)
}

/// [`advance_iteration`] with per-metric thresholds from `cfg`.
pub fn advance_iteration_with(state: &HipoState, outcomes: &[EvalOutcome], cfg: &HipoConfig) -> Result<HipoState, HipoError> {
    advance(state, outcomes, &|o| cfg.threshold_for(o.metric_kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn outcome(id: &str, score: f64) -> EvalOutcome {
        EvalOutcome { query_id: id.into(), metric_kind: MetricKind::RougeL, score, generations: vec![] }
    }

    fn gens(v: &[(&str, f64)]) -> EvalOutcome {
        EvalOutcome {
            query_id: "q".into(),
            metric_kind: MetricKind::Accuracy,
            score: 0.0,
            generations: v.iter().map(|&(t, s)| Generation { text: t.into(), score: s }).collect(),
        }
    }

    fn quad(pw: f64, pl: f64, rw: f64, rl: f64) -> LogProbQuad {
        LogProbQuad { policy_logp_chosen: pw, policy_logp_rejected: pl, ref_logp_chosen: rw, ref_logp_rejected: rl, chosen_token_count: 5 }
    }

    #[test]
    fn mining_is_strict() {
        let o = [outcome("a", 1.0), outcome("b", 0.4), outcome("c", 0.8)];
        assert_eq!(mine_hard_samples(&o, 0.8), ["b".into()].into_iter().collect());
        assert!(mine_hard_samples(&[outcome("a", 1.0)], 1.0).is_empty());
        let exact = [outcome("a", 0.99), outcome("b", 1.0)];
        assert_eq!(mine_hard_samples(&exact, 1.0).len(), 1);
    }

    #[test]
    fn per_kind_thresholds() {
        let cfg = HipoConfig::default();
        let mut acc = outcome("a", 0.9);
        acc.metric_kind = MetricKind::Accuracy;
        let rouge = outcome("r", 0.9);
        assert_eq!(mine_hard_samples_with(&[acc, rouge], &cfg), ["a".into()].into_iter().collect());
    }

    #[test]
    fn pairs() {
        let p = build_preference_pair("Q", "A", &gens(&[("A", 1.0), ("B", 0.0)])).unwrap().unwrap();
        assert_eq!((p.chosen.as_str(), p.rejected.as_str()), ("A", "B"));
        assert_eq!(build_preference_pair("Q", "A", &gens(&[("A", 1.0), ("A", 1.0)])), Ok(None));
        let p = build_preference_pair("Q", "A", &gens(&[("B", 0.3), ("C", 0.1)])).unwrap().unwrap();
        assert_eq!(p.rejected, "C");
        let p = build_preference_pair("Q", "A", &gens(&[("B", 0.1), ("C", 0.1)])).unwrap().unwrap();
        assert_eq!(p.rejected, "B");
        assert_eq!(build_preference_pair("Q", "A", &gens(&[])), Err(HipoError::NoGenerations("q".into())));
    }

    #[test]
    fn outcome_score_is_mean() {
        let o = EvalOutcome::from_generations(
            "q",
            MetricKind::RougeL,
            vec![Generation { text: "x".into(), score: 0.2 }, Generation { text: "y".into(), score: 0.6 }],
        )
        .unwrap();
        assert!((o.score - 0.4).abs() < 1e-15);
        assert!(EvalOutcome::from_generations("q", MetricKind::RougeL, vec![]).is_err());
    }

    #[test]
    fn dpo_examples() {
        assert!((dpo_loss(&quad(-5.0, -7.0, -5.0, -7.0), 0.1).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let q = quad(-2.0, -6.0, -4.0, -4.0);
        assert_eq!(q.margin(), 4.0);
        assert!((dpo_loss(&q, 0.25).unwrap() - 0.313262).abs() < 5e-7);
        let swapped = quad(-6.0, -2.0, -4.0, -4.0);
        assert!((dpo_loss(&swapped, 0.25).unwrap() - 1.313262).abs() < 5e-7);
    }

    #[test]
    fn dpo_is_stable_for_large_margins() {
        let q = quad(0.0, -10_000.0, -10_000.0, 0.0);
        let big = dpo_loss(&q, 0.1).unwrap();
        assert!((0.0..1e-300).contains(&big));
        let q = quad(-10_000.0, 0.0, 0.0, -10_000.0);
        assert!((dpo_loss(&q, 0.1).unwrap() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(dpo_loss(&quad(f64::NAN, 0.0, 0.0, 0.0), 0.1), Err(HipoError::NonFinite("policy_logp_chosen")));
        assert_eq!(dpo_loss(&quad(0.5, 0.0, 0.0, 0.0), 0.1), Err(HipoError::PositiveLogProb("policy_logp_chosen")));
        assert!(dpo_loss(&quad(0.0, 0.0, 0.0, 0.0), 0.0).is_err());
        let zero = LogProbQuad { chosen_token_count: 0, ..quad(0.0, 0.0, 0.0, 0.0) };
        assert_eq!(dpo_loss(&zero, 0.1), Err(HipoError::ZeroTokens));
    }

    #[test]
    fn hipo_examples() {
        let q = quad(-10.0, -7.0, -10.0, -7.0);
        let cfg = HipoConfig { beta: 0.3, nll_lambda: 0.1, ..Default::default() };
        assert!((hipo_loss(&q, &cfg).unwrap() - 0.893147).abs() < 5e-7);
        let plain = HipoConfig { nll_lambda: 0.0, ..cfg.clone() };
        assert_eq!(hipo_loss(&q, &plain).unwrap().to_bits(), dpo_loss(&q, 0.3).unwrap().to_bits());
        let zero_nll = quad(0.0, -7.0, 0.0, -7.0);
        let one = HipoConfig { nll_lambda: 1.0, ..cfg.clone() };
        assert_eq!(hipo_loss(&zero_nll, &one), dpo_loss(&zero_nll, 0.3));
        let sum = HipoConfig { nll_normalization: NllNormalization::Sum, ..cfg };
        assert!((hipo_loss(&q, &sum).unwrap() - (1.0 + core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(HipoConfig::default().validate().is_ok());
        assert!(HipoConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(HipoConfig { nll_lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(HipoConfig { hard_threshold: Some(1.2), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn iteration_transitions() {
        let s = HipoState::new(["a", "b"]);
        let next = advance_iteration(&s, &[outcome("a", 1.0), outcome("b", 0.2)], 0.8).unwrap();
        assert_eq!(next.iteration, 1);
        assert_eq!(next.active, ["b".into()].into_iter().collect());
        assert_eq!(next.resolved, ["a".into()].into_iter().collect());
        assert_eq!(next.reference_policy, ReferencePolicy::Iteration(0));

        let done = advance_iteration(&s, &[outcome("a", 0.9), outcome("b", 0.8)], 0.8).unwrap();
        assert!(done.is_done());

        let none = advance_iteration(&s, &[outcome("a", 0.1), outcome("b", 0.2)], 0.8).unwrap();
        assert_eq!((none.iteration, &none.active), (1, &s.active));

        assert_eq!(advance_iteration(&s, &[outcome("a", 1.0)], 0.8), Err(HipoError::MissingOutcome("b".into())));
    }
}
