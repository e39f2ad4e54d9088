//! LLM-judge quality scoring: the cumulative 0-5 rubric prompt, response
//! parsing, judge/reference agreement statistics and threshold filtering.

use alloc::string::String;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

pub const MAX_SCORE: u8 = 5;
pub const RATIONALE_MAX_WORDS: usize = 50;

const PROMPT_HEAD: &str = "The following is a text fragment. Please evaluate whether it has high natural language value and whether it is suitable for training LLMs, according to the cumulative 5-point scoring criteria below.

Complete the sections \"Scoring Rationale\" and \"Score\".

Scoring Criteria

- If the content contains only meaningless or private information (e.g., random code, HTTP links, copyright notices, personal identifiable information, or binary encodings of images), assign 0 points.
- If the fragment provides some basic information, even if it includes advertisements or promotional content, add 1 point.
- If the writing style is fluent, semantically coherent, free of repetition and grammatical errors, add 1 point.
- If the fragment presents relatively complete semantic content, is written fluently, and focuses on a single coherent topic rather than a collage of unrelated segments, add 1 point.
- If the fragment has clear educational or literary value, or provides meaningful viewpoints that facilitate learning, with clear and coherent writing (e.g., textbook- or tutorial-like content with minimal redundancy), add 1 point.
- If the fragment demonstrates outstanding educational value or extremely high information density, offering deep, comprehensive insights with explicit reasoning and no irrelevant content, add 1 point.

Text Fragment

";

const PROMPT_TAIL: &str = "

Scoring Rationale

Briefly explain the rationale for the score (no more than 50 words).

Score

Provide the score in a fixed format as a single integer from 0 to 5. Do not output any additional content.";

/// Marker that identifies a scoring prompt (used by mock judges).
pub const PROMPT_MARKER: &str = "cumulative 5-point scoring criteria";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("text to score is empty")]
    EmptyText,
    #[error("score {0} is outside 0..=5")]
    OutOfRange(i64),
    #[error("no integer score found in response")]
    Unparseable,
}

pub fn build_scoring_prompt(text: &str) -> Result<String, ScoringError> {
    if text.trim().is_empty() {
        return Err(ScoringError::EmptyText);
    }
    let mut prompt = String::with_capacity(PROMPT_HEAD.len() + text.len() + PROMPT_TAIL.len());
    prompt.push_str(PROMPT_HEAD);
    prompt.push_str(text);
    prompt.push_str(PROMPT_TAIL);
    Ok(prompt)
}

/// Recovers the fragment from a prompt built by [`build_scoring_prompt`].
pub fn prompt_fragment(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(PROMPT_HEAD)?.strip_suffix(PROMPT_TAIL)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Byte span and value of the last standalone integer in `s`.
///
/// A digit run is standalone when it is not glued to letters, digits or a
/// decimal point, and is not a `/N` denominator.
fn last_standalone_integer(s: &str) -> Option<(usize, i64)> {
    let bytes = s.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let end = i;
        let before = s[..start].chars().next_back();
        let after = s[end..].chars().next();
        let glued = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        let decimal_before = before == Some('.') && start >= 2 && bytes[start - 2].is_ascii_digit();
        let decimal_after = after == Some('.') && bytes.get(end + 1).is_some_and(u8::is_ascii_digit);
        if glued(before) || glued(after) || decimal_before || decimal_after || before == Some('/') {
            continue;
        }
        let magnitude = s[start..end].parse::<i64>().unwrap_or(i64::MAX);
        let (pos, value) = if before == Some('-') {
            (start - 1, -magnitude)
        } else {
            (start, magnitude)
        };
        found = Some((pos, value));
    }
    found
}

pub fn parse_score_response(response: &str) -> Result<u8, ScoringError> {
    parse_judgement(response).map(|(score, _)| score)
}

/// Parses a judge response into its score and (word-capped) rationale.
pub fn parse_judgement(response: &str) -> Result<(u8, Option<String>), ScoringError> {
    let (pos, value) = last_standalone_integer(response).ok_or(ScoringError::Unparseable)?;
    if !(0..=MAX_SCORE as i64).contains(&value) {
        return Err(ScoringError::OutOfRange(value));
    }
    Ok((value as u8, extract_rationale(&response[..pos])))
}

fn extract_rationale(head: &str) -> Option<String> {
    let mut words: Vec<&str> = Vec::new();
    for line in head.lines() {
        let trimmed = line.trim().trim_start_matches('#').trim();
        let bare = trimmed.trim_end_matches(':').trim().trim_matches('*');
        if bare.eq_ignore_ascii_case("score") || bare.eq_ignore_ascii_case("scoring rationale") {
            continue;
        }
        let trimmed = strip_label(trimmed, "Scoring Rationale:");
        let trimmed = strip_label(trimmed, "Score:");
        words.extend(trimmed.split_whitespace());
    }
    if words.is_empty() {
        return None;
    }
    words.truncate(RATIONALE_MAX_WORDS);
    Some(words.join(" "))
}

fn strip_label<'a>(line: &'a str, label: &str) -> &'a str {
    match line.get(..label.len()) {
        Some(p) if p.eq_ignore_ascii_case(label) => line[label.len()..].trim_start(),
        _ => line,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("prediction and reference lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("score lists are empty")]
    Empty,
    #[error("a score list is constant; rank correlation is undefined")]
    DegenerateRanks,
}

/// Agreement between judge scores and reference labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerAgreement {
    /// `None` when either list is constant.
    pub spearman_rho: Option<f64>,
    pub mae: f64,
    pub adjacent_accuracy: f64,
    pub exact_accuracy: f64,
}

/// 1-based ranks with ties given the mean of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean(i+1..=j)
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(preds: &[f64], golds: &[f64]) -> Result<f64, AgreementError> {
    check_lengths(preds, golds)?;
    pearson(&average_ranks(preds), &average_ranks(golds)).ok_or(AgreementError::DegenerateRanks)
}

fn check_lengths(preds: &[f64], golds: &[f64]) -> Result<(), AgreementError> {
    if preds.len() != golds.len() {
        return Err(AgreementError::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(AgreementError::Empty);
    }
    Ok(())
}

pub fn scorer_agreement(preds: &[f64], golds: &[f64]) -> Result<ScorerAgreement, AgreementError> {
    check_lengths(preds, golds)?;
    let n = preds.len() as f64;
    let mut abs_err = 0.0;
    let mut adjacent = 0usize;
    let mut exact = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        let d = libm::fabs(p - g);
        abs_err += d;
        adjacent += (d <= 1.0) as usize;
        exact += (d == 0.0) as usize;
    }
    let spearman_rho = match spearman(preds, golds) {
        Ok(rho) => Some(rho),
        Err(AgreementError::DegenerateRanks) => None,
        Err(e) => return Err(e),
    };
    Ok(ScorerAgreement {
        spearman_rho,
        mae: abs_err / n,
        adjacent_accuracy: adjacent as f64 / n,
        exact_accuracy: exact as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThresholdError {
    #[error("document `{0}` has no score")]
    UnscoredDocument(String),
}

/// Keeps documents scoring at least `tau`, preserving order.
pub fn threshold_filter(
    docs: impl IntoIterator<Item = Document>,
    tau: u8,
) -> Result<Vec<Document>, ThresholdError> {
    let mut kept = Vec::new();
    for doc in docs {
        match doc.score {
            None => return Err(ThresholdError::UnscoredDocument(doc.id)),
            Some(s) if s >= tau => kept.push(doc),
            Some(_) => {}
        }
    }
    Ok(kept)
}

/// Seeded choice of `sample_n` distinct indices out of `len`, ascending.
/// Returns every index when `sample_n >= len`.
pub fn select_sample(len: usize, sample_n: usize, seed: u64) -> Vec<usize> {
    if sample_n >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, sample_n).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CounterConfig, Lang, Source};
    use alloc::format;
    use alloc::vec;

    #[test]
    fn prompt_substitutes_text() {
        let p = build_scoring_prompt("hello").unwrap();
        assert!(p.contains("Text Fragment\n\nhello\n\nScoring Rationale"));
        assert_eq!(prompt_fragment(&p), Some("hello"));
    }

    #[test]
    fn prompt_has_six_criteria_and_both_sections() {
        let p = build_scoring_prompt("x").unwrap();
        let bullets = p.lines().filter(|l| l.starts_with("- If ")).count();
        assert_eq!(bullets, 6);
        assert!(p.contains("\"Scoring Rationale\" and \"Score\""));
        assert!(p.contains(PROMPT_MARKER));
        assert!(p.ends_with("single integer from 0 to 5. Do not output any additional content."));
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(build_scoring_prompt("  "), Err(ScoringError::EmptyText));
    }

    #[test]
    fn parses_direct_score() {
        assert_eq!(parse_score_response("Score\n3"), Ok(3));
        assert_eq!(parse_score_response("4"), Ok(4));
    }

    #[test]
    fn rationale_then_score() {
        let (score, rationale) = parse_judgement("fluent and coherent.\n\n5").unwrap();
        assert_eq!(score, 5);
        assert_eq!(rationale.as_deref(), Some("fluent and coherent."));
        let (_, r) = parse_judgement("Scoring Rationale\nGood text, 3 topics.\n\nScore\n2").unwrap();
        assert_eq!(r.as_deref(), Some("Good text, 3 topics."));
    }

    #[test]
    fn out_of_range_and_unparseable() {
        assert_eq!(parse_score_response("6"), Err(ScoringError::OutOfRange(6)));
        assert_eq!(parse_score_response("Score: -1"), Err(ScoringError::OutOfRange(-1)));
        assert_eq!(parse_score_response("no digits here"), Err(ScoringError::Unparseable));
        assert_eq!(parse_score_response("v2 and x3y"), Err(ScoringError::Unparseable));
    }

    #[test]
    fn ignores_denominators_and_decimals() {
        assert_eq!(parse_score_response("Score: 4/5"), Ok(4));
        assert_eq!(parse_score_response("about 3.5 overall; final 3"), Ok(3));
        assert_eq!(parse_score_response("final 3.5"), Err(ScoringError::Unparseable));
    }

    #[test]
    fn rationale_capped_at_fifty_words() {
        let long = format!("{}\n2", "word ".repeat(80));
        let (_, r) = parse_judgement(&long).unwrap();
        assert_eq!(r.unwrap().split_whitespace().count(), RATIONALE_MAX_WORDS);
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 5.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn agreement_identity() {
        let a = scorer_agreement(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.spearman_rho, Some(1.0));
        assert_eq!(a.mae, 0.0);
        assert_eq!(a.adjacent_accuracy, 1.0);
    }

    #[test]
    fn agreement_with_ties() {
        // ranks [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]: rho = 4.5 / sqrt(4.5 * 5)
        let a = scorer_agreement(&[1.0, 2.0, 2.0, 5.0], &[0.0, 1.0, 3.0, 4.0]).unwrap();
        assert!((a.spearman_rho.unwrap() - 0.948683).abs() < 1e-6);
        assert_eq!(a.mae, 1.0);
        assert_eq!(a.adjacent_accuracy, 1.0);
    }

    #[test]
    fn agreement_reversal_and_errors() {
        assert_eq!(spearman(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]), Ok(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0, 2.0]), Err(AgreementError::LengthMismatch(1, 2)));
        assert_eq!(spearman(&[2.0, 2.0], &[1.0, 2.0]), Err(AgreementError::DegenerateRanks));
        let a = scorer_agreement(&[2.0, 2.0], &[1.0, 4.0]).unwrap();
        assert_eq!(a.spearman_rho, None);
        assert_eq!(a.adjacent_accuracy, 0.5);
        assert_eq!(scorer_agreement(&[], &[]), Err(AgreementError::Empty));
    }

    fn scored(id: &str, score: Option<u8>) -> Document {
        let mut d = Document::new(id, "t", Lang::Zh, Source::JudicialJudgments, &CounterConfig::default());
        d.score = score;
        d
    }

    #[test]
    fn threshold_is_inclusive() {
        let docs = || vec![scored("a", Some(0)), scored("b", Some(3)), scored("c", Some(5))];
        let ids = |v: Vec<Document>| v.into_iter().map(|d| d.id).collect::<Vec<_>>();
        assert_eq!(ids(threshold_filter(docs(), 3).unwrap()), ["b", "c"]);
        assert_eq!(threshold_filter(docs(), 0).unwrap().len(), 3);
        assert!(threshold_filter(docs(), 6).unwrap().is_empty());
        assert_eq!(
            threshold_filter(vec![scored("z", None)], 3),
            Err(ThresholdError::UnscoredDocument("z".into()))
        );
    }

    #[test]
    fn sampling_is_seeded() {
        let a = select_sample(5, 2, 7);
        assert_eq!(a, select_sample(5, 2, 7));
        assert_eq!(a.len(), 2);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_sample(3, 10, 1), vec![0, 1, 2]);
    }
}
