//! Task metrics: accuracy, set F1/F0.5, soft-F1, rc-F1, ROUGE-L and NLD.
//!
//! Every metric returns a value in `[0, 1]` with 1 meaning a perfect
//! prediction. Text inputs are tokenized with [`crate::corpus::segment`].

mod assign;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::segment;

pub use assign::max_weight_assignment;

pub const DEFAULT_NLD_MAX_TERM: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    #[serde(alias = "f1")]
    MacroF1,
    #[serde(alias = "f0.5", alias = "f0_5")]
    F05,
    #[serde(alias = "soft-f1")]
    SoftF1,
    #[serde(alias = "rc-f1")]
    RcF1,
    #[serde(alias = "rouge-l")]
    RougeL,
    Nld,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Accuracy,
        MetricKind::MacroF1,
        MetricKind::F05,
        MetricKind::SoftF1,
        MetricKind::RcF1,
        MetricKind::RougeL,
        MetricKind::Nld,
    ];

    /// Whether a per-example score is all-or-nothing.
    pub fn is_exact_match(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MacroF1 => "macro_f1",
            MetricKind::F05 => "f05",
            MetricKind::SoftF1 => "soft_f1",
            MetricKind::RcF1 => "rc_f1",
            MetricKind::RougeL => "rouge_l",
            MetricKind::Nld => "nld",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("metric is undefined on empty input")]
    Empty,
    #[error("at least one gold answer is required")]
    NoGold,
    #[error("term {value} is outside [0, {max}]")]
    OutOfRange { value: f64, max: f64 },
    #[error("prediction or gold has the wrong shape for {0}")]
    ShapeMismatch(MetricKind),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub nld_max_term: f64,
    pub soft_f1_matching: Matching,
    pub f1_average: F1Average,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { nld_max_term: DEFAULT_NLD_MAX_TERM, soft_f1_matching: Matching::Greedy, f1_average: F1Average::Macro }
    }
}

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `(1+β²)PR / (β²P + R)`, 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn f_from_counts(tp: usize, pred: usize, gold: usize, beta: f64) -> f64 {
    if pred == 0 && gold == 0 {
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    f_beta(tp as f64 / pred as f64, tp as f64 / gold as f64, beta)
}

/// F-beta between two label sets (duplicates ignored). Two empty sets agree
/// perfectly.
pub fn set_f_beta<L: Ord>(pred: &[L], gold: &[L], beta: f64) -> f64 {
    let p: BTreeSet<&L> = pred.iter().collect();
    let g: BTreeSet<&L> = gold.iter().collect();
    f_from_counts(p.intersection(&g).count(), p.len(), g.len(), beta)
}

/// Corpus-level multi-label F1. Macro averages per-label F1 over every label
/// seen in predictions or golds; micro pools the counts.
pub fn multilabel_f1<L: Ord + Clone>(preds: &[Vec<L>], golds: &[Vec<L>], average: F1Average) -> Result<f64, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    // label -> (tp, fp, fn)
    let mut counts: BTreeMap<L, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let p: BTreeSet<&L> = p.iter().collect();
        let g: BTreeSet<&L> = g.iter().collect();
        for l in p.union(&g) {
            let c = counts.entry((*l).clone()).or_default();
            match (p.contains(l), g.contains(l)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
    }
    if counts.is_empty() {
        return Ok(1.0);
    }
    Ok(match average {
        F1Average::Macro => {
            counts.values().map(|&(tp, fp, fn_)| f_from_counts(tp, tp + fp, tp + fn_, 1.0)).sum::<f64>() / counts.len() as f64
        }
        F1Average::Micro => {
            let (tp, fp, fn_) = counts.values().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
            f_from_counts(tp, tp + fp, tp + fn_, 1.0)
        }
    })
}

pub fn macro_f1<L: Ord + Clone>(preds: &[Vec<L>], golds: &[Vec<L>]) -> Result<f64, MetricError> {
    multilabel_f1(preds, golds, F1Average::Macro)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based F1 with `P = LCS/|cand|` and `R = LCS/|ref|`.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    f_beta(lcs / candidate.len() as f64, lcs / reference.len() as f64, 1.0)
}

/// Bag-of-tokens F1 with multiset overlap.
pub fn token_f1<T: Ord>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut bag: BTreeMap<&T, usize> = BTreeMap::new();
    for t in gold {
        *bag.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(n) = bag.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    f_from_counts(overlap, pred.len(), gold.len(), 1.0)
}

/// Span-set F1 with partial credit: matched pair token-F1s summed, then
/// `2·mass / (|pred| + |gold|)`. Two empty sets score 1.
pub fn soft_f1<T: Ord>(pred: &[Vec<T>], gold: &[Vec<T>], matching: Matching) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let cols = pred.len();
    let weights: Vec<f64> = gold.iter().flat_map(|g| pred.iter().map(move |p| token_f1(p, g))).collect();
    let mass: f64 = match matching {
        Matching::Optimal => max_weight_assignment(&weights, gold.len(), cols)
            .into_iter()
            .map(|(i, j)| weights[i * cols + j])
            .sum(),
        Matching::Greedy => {
            let mut pairs: Vec<(usize, usize)> =
                (0..gold.len()).flat_map(|i| (0..cols).map(move |j| (i, j))).filter(|&(i, j)| weights[i * cols + j] > 0.0).collect();
            // Stable on ties: earlier gold, then earlier pred.
            pairs.sort_by(|a, b| weights[b.0 * cols + b.1].total_cmp(&weights[a.0 * cols + a.1]));
            let mut gold_used = vec![false; gold.len()];
            let mut pred_used = vec![false; cols];
            let mut mass = 0.0;
            for (i, j) in pairs {
                if !gold_used[i] && !pred_used[j] {
                    gold_used[i] = true;
                    pred_used[j] = true;
                    mass += weights[i * cols + j];
                }
            }
            mass
        }
    };
    (2.0 * mass / (pred.len() + gold.len()) as f64).min(1.0)
}

/// Best bag-of-tokens F1 against any of the gold answers.
pub fn rc_f1<T: Ord>(pred: &[T], golds: &[Vec<T>]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::NoGold);
    }
    Ok(golds.iter().map(|g| token_f1(pred, g)).fold(0.0, f64::max))
}

/// Normalized log deviation between numeric terms (e.g. sentence lengths in
/// months): `1 − min(1, |ln(p+1) − ln(g+1)| / ln(max+1))`.
pub fn nld(pred_term: f64, gold_term: f64, max_term: f64) -> Result<f64, MetricError> {
    if !(max_term > 0.0) || !max_term.is_finite() {
        return Err(MetricError::OutOfRange { value: max_term, max: f64::INFINITY });
    }
    for v in [pred_term, gold_term] {
        if !(0.0..=max_term).contains(&v) {
            return Err(MetricError::OutOfRange { value: v, max: max_term });
        }
    }
    let dev = libm::fabs(libm::log1p(pred_term) - libm::log1p(gold_term)) / libm::log1p(max_term);
    Ok(1.0 - dev.min(1.0))
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn as_labels(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Array(items) => items.iter().map(as_text).collect(),
        other => as_text(other).map(|s| vec![s]),
    }
}

fn tokens(s: &str) -> Vec<String> {
    segment(s).into_iter().map(String::from).collect()
}

fn as_span(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(tokens(s)),
        Value::Array(items) => items.iter().map(as_text).collect(),
        _ => None,
    }
}

fn as_spans(v: &Value) -> Option<Vec<Vec<String>>> {
    match v {
        Value::Array(items) => items.iter().map(as_span).collect(),
        _ => None,
    }
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Per-example score for `kind` on JSON-shaped inputs.
///
/// Shapes: accuracy takes scalars; F1 kinds take a label or a list of
/// labels; ROUGE-L takes strings; soft-F1 takes a list of spans, each a
/// string or a token list; rc-F1 takes a string and a string or list of
/// strings; NLD takes numbers or numeric strings.
pub fn score(kind: MetricKind, pred: &Value, gold: &Value, opts: &MetricOptions) -> Result<f64, MetricError> {
    let shape = || MetricError::ShapeMismatch(kind);
    match kind {
        MetricKind::Accuracy => {
            let (p, g) = (as_text(pred).ok_or_else(shape)?, as_text(gold).ok_or_else(shape)?);
            Ok(if p.trim() == g.trim() { 1.0 } else { 0.0 })
        }
        MetricKind::MacroF1 | MetricKind::F05 => {
            let beta = if kind == MetricKind::F05 { 0.5 } else { 1.0 };
            Ok(set_f_beta(&as_labels(pred).ok_or_else(shape)?, &as_labels(gold).ok_or_else(shape)?, beta))
        }
        MetricKind::RougeL => {
            let (p, g) = (pred.as_str().ok_or_else(shape)?, gold.as_str().ok_or_else(shape)?);
            Ok(rouge_l(&segment(p), &segment(g)))
        }
        MetricKind::SoftF1 => {
            Ok(soft_f1(&as_spans(pred).ok_or_else(shape)?, &as_spans(gold).ok_or_else(shape)?, opts.soft_f1_matching))
        }
        MetricKind::RcF1 => {
            let p = tokens(pred.as_str().ok_or_else(shape)?);
            let golds: Vec<Vec<String>> = match gold {
                Value::String(s) => vec![tokens(s)],
                Value::Array(items) => items.iter().map(|v| v.as_str().map(tokens)).collect::<Option<_>>().ok_or_else(shape)?,
                _ => return Err(shape()),
            };
            rc_f1(&p, &golds)
        }
        MetricKind::Nld => nld(as_number(pred).ok_or_else(shape)?, as_number(gold).ok_or_else(shape)?, opts.nld_max_term),
    }
}

/// Task-level aggregate. F1 kinds pool labels across examples (macro or
/// micro per `opts`); every other kind is the mean per-example score.
pub fn aggregate(kind: MetricKind, pairs: &[(Value, Value)], opts: &MetricOptions) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    if kind == MetricKind::MacroF1 {
        let shape = || MetricError::ShapeMismatch(kind);
        let preds: Vec<Vec<String>> = pairs.iter().map(|(p, _)| as_labels(p)).collect::<Option<_>>().ok_or_else(shape)?;
        let golds: Vec<Vec<String>> = pairs.iter().map(|(_, g)| as_labels(g)).collect::<Option<_>>().ok_or_else(shape)?;
        return multilabel_f1(&preds, &golds, opts.f1_average);
    }
    let mut sum = 0.0;
    for (p, g) in pairs {
        sum += score(kind, p, g, opts)?;
    }
    Ok(sum / pairs.len() as f64)
}
