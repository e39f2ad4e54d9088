//! Rule-based cleaning: length bounds and special-character dominance.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharClass {
    /// Brackets and symbols left behind by HTML, Markdown and wiki markup.
    Markup,
    /// Control codes other than `\n`, `\r` and `\t`.
    Control,
    /// U+FFFD, the decoder's replacement character.
    Replacement,
}

const MARKUP: &[char] = &['<', '>', '[', ']', '{', '}', '|', '\\', '#', '*', '=', '_', '~', '^', '`'];

impl CharClass {
    pub const ALL: [CharClass; 3] = [CharClass::Markup, CharClass::Control, CharClass::Replacement];

    pub fn contains(self, c: char) -> bool {
        match self {
            CharClass::Markup => MARKUP.contains(&c),
            CharClass::Control => c.is_control() && !matches!(c, '\n' | '\r' | '\t'),
            CharClass::Replacement => c == '\u{FFFD}',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRuleSet {
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_special_ratio: f64,
    pub special_char_classes: BTreeSet<CharClass>,
}

impl Default for FilterRuleSet {
    fn default() -> Self {
        Self {
            min_chars: 32,
            max_chars: 131_072,
            max_special_ratio: 0.3,
            special_char_classes: CharClass::ALL.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("min_chars must be positive and below max_chars ({min} >= {max})")]
    LengthBounds { min: usize, max: usize },
    #[error("max_special_ratio {0} is outside [0, 1]")]
    SpecialRatio(f64),
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.min_chars == 0 || self.min_chars >= self.max_chars {
            return Err(RuleError::LengthBounds { min: self.min_chars, max: self.max_chars });
        }
        if !(0.0..=1.0).contains(&self.max_special_ratio) {
            return Err(RuleError::SpecialRatio(self.max_special_ratio));
        }
        Ok(())
    }

    /// Fraction of characters in `text` that fall in an enabled class.
    pub fn special_ratio(&self, text: &str) -> f64 {
        let mut total = 0usize;
        let mut special = 0usize;
        for c in text.chars() {
            total += 1;
            if self.special_char_classes.iter().any(|cls| cls.contains(c)) {
                special += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            special as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    TooLong,
    SpecialCharDominated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

impl FilterVerdict {
    pub const KEEP: FilterVerdict = FilterVerdict { kept: true, reason: None };

    pub fn reject(reason: RejectReason) -> Self {
        Self { kept: false, reason: Some(reason) }
    }
}

/// Applies the length checks then the special-character check; the first
/// failing rule is reported.
pub fn apply_filters(doc: &Document, rules: &FilterRuleSet) -> FilterVerdict {
    let len = doc.char_len();
    if len < rules.min_chars {
        FilterVerdict::reject(RejectReason::TooShort)
    } else if len > rules.max_chars {
        FilterVerdict::reject(RejectReason::TooLong)
    } else if rules.special_ratio(&doc.text) > rules.max_special_ratio {
        FilterVerdict::reject(RejectReason::SpecialCharDominated)
    } else {
        FilterVerdict::KEEP
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub too_short: usize,
    pub too_long: usize,
    pub special_char_dominated: usize,
}

impl FilterStats {
    pub fn rejected(&self) -> usize {
        self.too_short + self.too_long + self.special_char_dominated
    }

    fn record(&mut self, verdict: FilterVerdict) {
        self.input += 1;
        match verdict.reason {
            None => self.kept += 1,
            Some(RejectReason::TooShort) => self.too_short += 1,
            Some(RejectReason::TooLong) => self.too_long += 1,
            Some(RejectReason::SpecialCharDominated) => self.special_char_dominated += 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub rejected: Vec<(Document, RejectReason)>,
    pub stats: FilterStats,
}

/// Partitions `docs` into kept and rejected, preserving input order in both.
pub fn filter_corpus(docs: impl IntoIterator<Item = Document>, rules: &FilterRuleSet) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for doc in docs {
        let verdict = apply_filters(&doc, rules);
        out.stats.record(verdict);
        match verdict.reason {
            None => out.kept.push(doc),
            Some(reason) => out.rejected.push((doc, reason)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CounterConfig, Lang, Source};
    use alloc::string::String;
    use alloc::vec;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, Lang::En, Source::GeneralIndustry, &CounterConfig::default())
    }

    fn prose(n: usize) -> String {
        "abcdefghij ".chars().cycle().take(n).collect()
    }

    #[test]
    fn short_doc_rejected() {
        let v = apply_filters(&doc("a", "0123456789"), &FilterRuleSet::default());
        assert_eq!(v, FilterVerdict::reject(RejectReason::TooShort));
    }

    #[test]
    fn long_doc_rejected() {
        let rules = FilterRuleSet { max_chars: 100, ..Default::default() };
        let v = apply_filters(&doc("a", &prose(101)), &rules);
        assert_eq!(v.reason, Some(RejectReason::TooLong));
        assert_eq!(apply_filters(&doc("a", &prose(100)), &rules), FilterVerdict::KEEP);
    }

    #[test]
    fn markup_dominated_doc_rejected() {
        let text: String = "a<b>".repeat(20); // 50% markup, 80 chars
        let rules = FilterRuleSet { max_special_ratio: 0.3, ..Default::default() };
        assert_eq!(rules.special_ratio(&text), 0.5);
        let v = apply_filters(&doc("a", &text), &rules);
        assert_eq!(v.reason, Some(RejectReason::SpecialCharDominated));
    }

    #[test]
    fn control_and_replacement_chars_count() {
        let rules = FilterRuleSet::default();
        assert_eq!(rules.special_ratio("\u{FFFD}\u{0007}ab"), 0.5);
        assert_eq!(rules.special_ratio("a\nb\t"), 0.0);
        let markup_only = FilterRuleSet {
            special_char_classes: [CharClass::Markup].into_iter().collect(),
            ..Default::default()
        };
        assert_eq!(markup_only.special_ratio("\u{FFFD}\u{0007}ab"), 0.0);
    }

    #[test]
    fn plain_prose_kept() {
        assert_eq!(apply_filters(&doc("a", &prose(200)), &FilterRuleSet::default()), FilterVerdict::KEEP);
    }

    #[test]
    fn length_checked_before_special_chars() {
        let v = apply_filters(&doc("a", "<<<<"), &FilterRuleSet::default());
        assert_eq!(v.reason, Some(RejectReason::TooShort));
    }

    #[test]
    fn rule_validation() {
        assert!(FilterRuleSet::default().validate().is_ok());
        let bad = FilterRuleSet { min_chars: 10, max_chars: 10, ..Default::default() };
        assert!(matches!(bad.validate(), Err(RuleError::LengthBounds { .. })));
        let bad = FilterRuleSet { max_special_ratio: 1.5, ..Default::default() };
        assert_eq!(bad.validate(), Err(RuleError::SpecialRatio(1.5)));
    }

    #[test]
    fn corpus_stats() {
        let out = filter_corpus(Vec::new(), &FilterRuleSet::default());
        assert!(out.kept.is_empty());
        assert_eq!(out.stats, FilterStats::default());

        let docs = vec![doc("a", &prose(100)), doc("b", "short"), doc("c", &prose(64))];
        let out = filter_corpus(docs, &FilterRuleSet::default());
        assert_eq!(out.kept.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(out.stats.too_short, 1);
        assert_eq!(out.stats.kept + out.stats.rejected(), 3);

        let docs = vec![doc("a", &prose(100)), doc("b", &prose(100))];
        let out = filter_corpus(docs, &FilterRuleSet::default());
        assert_eq!(out.stats.rejected(), 0);
    }
}
