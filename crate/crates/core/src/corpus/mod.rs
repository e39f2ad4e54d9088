//! Shared data types: documents, instruction samples, preference pairs and
//! corpus manifests.

mod manifest;
pub mod published;
mod tokens;

use alloc::string::String;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{
    compute_ratios, validate_manifest, CategorySubtotal, CorpusManifest, CorpusRatios,
    EntrySource, InstructionGroup, ManifestEntry, ManifestIssue, ManifestTotals, RatioError,
    TotalField, ValidationReport,
};
pub use tokens::{count_tokens, is_cjk, segment, CounterConfig, Segments, TokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lang {
    Zh,
    En,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Zh => "zh",
            Lang::En => "en",
        }
    }
}

/// CPT source taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    GeneralIndustry,
    LegalPoliticalNews,
    JudicialJudgments,
    ArticlesInterpretations,
    LegalBooksPapers,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::GeneralIndustry,
        Source::LegalPoliticalNews,
        Source::JudicialJudgments,
        Source::ArticlesInterpretations,
        Source::LegalBooksPapers,
    ];

    /// Everything except the general industry corpora counts as domain data.
    pub fn is_general(self) -> bool {
        matches!(self, Source::GeneralIndustry)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::GeneralIndustry => "general_industry",
            Source::LegalPoliticalNews => "legal_political_news",
            Source::JudicialJudgments => "judicial_judgments",
            Source::ArticlesInterpretations => "articles_interpretations",
            Source::LegalBooksPapers => "legal_books_papers",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub lang: Lang,
    pub source: Source,
    pub token_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
}

impl Document {
    /// Builds a document whose token count comes from `counter`.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: Lang,
        source: Source,
        counter: &impl TokenCounter,
    ) -> Self {
        let text = text.into();
        let token_count = counter.count(&text);
        Self {
            id: id.into(),
            text,
            lang,
            source,
            token_count,
            score: None,
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EnGeneral,
    ZhGeneral,
    ZhPolilegal,
}

impl Category {
    pub fn is_general(self) -> bool {
        !matches!(self, Category::ZhPolilegal)
    }

    pub fn lang(self) -> Lang {
        match self {
            Category::EnGeneral => Lang::En,
            Category::ZhGeneral | Category::ZhPolilegal => Lang::Zh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DialogueQa,
    InstructionFollowing,
    ArticleMemory,
    PolilegalTasks,
    DocumentGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("field `{0}` must be non-empty")]
    EmptyField(&'static str),
    #[error("chosen and rejected responses are identical")]
    IdenticalResponses,
}

/// A `{query, golden answer}` SFT sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub query: String,
    #[serde(alias = "golden")]
    pub golden_answer: String,
    pub category: Category,
    pub task: Task,
}

impl InstructionSample {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.query.is_empty() {
            return Err(SampleError::EmptyField("query"));
        }
        if self.golden_answer.is_empty() {
            return Err(SampleError::EmptyField("golden_answer"));
        }
        Ok(())
    }
}

/// A `{query, chosen, rejected}` preference triple.
///
/// Construct through [`PreferencePair::new`] to get the invariants checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query: String,
    pub chosen: String,
    pub rejected: String,
}

impl PreferencePair {
    pub fn new(
        query: impl Into<String>,
        chosen: impl Into<String>,
        rejected: impl Into<String>,
    ) -> Result<Self, SampleError> {
        let pair = Self {
            query: query.into(),
            chosen: chosen.into(),
            rejected: rejected.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        for (name, value) in [
            ("query", &self.query),
            ("chosen", &self.chosen),
            ("rejected", &self.rejected),
        ] {
            if value.is_empty() {
                return Err(SampleError::EmptyField(name));
            }
        }
        if self.chosen == self.rejected {
            return Err(SampleError::IdenticalResponses);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_counts_tokens_on_construction() {
        let d = Document::new("d1", "hello world", Lang::En, Source::GeneralIndustry, &CounterConfig::default());
        assert_eq!(d.token_count, 2);
        assert_eq!(d.score, None);
    }

    #[test]
    fn preference_pair_invariants() {
        assert!(PreferencePair::new("q", "a", "b").is_ok());
        assert_eq!(PreferencePair::new("q", "a", "a"), Err(SampleError::IdenticalResponses));
        assert_eq!(PreferencePair::new("", "a", "b"), Err(SampleError::EmptyField("query")));
    }

    #[test]
    fn instruction_sample_requires_text() {
        let mut s = InstructionSample {
            id: "s".into(),
            query: "q".into(),
            golden_answer: "a".into(),
            category: Category::ZhPolilegal,
            task: Task::ArticleMemory,
        };
        assert!(s.validate().is_ok());
        s.golden_answer.clear();
        assert_eq!(s.validate(), Err(SampleError::EmptyField("golden_answer")));
    }

    #[test]
    fn serde_names_are_snake_case() {
        let json = serde_json::to_string(&Source::ArticlesInterpretations).unwrap();
        assert_eq!(json, "\"articles_interpretations\"");
        let lang: Lang = serde_json::from_str("\"zh\"").unwrap();
        assert_eq!(lang, Lang::Zh);
    }
}
