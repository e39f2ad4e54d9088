//! Knowledge-guided instruction synthesis for statutes.
//!
//! Each requested [`KnowledgeDimension`] becomes one generation constraint in
//! the prompt, and the model must answer with a JSON array of
//! `{dimension, instruction, output}` objects. Free-text answers are rejected.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeDimension {
    NormativeKnowledge,
    LegalElementsAndConsequences,
    ConceptualKnowledge,
    SystemicKnowledge,
    BoundaryAndDistinction,
    ValueAndPrinciples,
    SubjectObjectRelations,
    InterpretationAndDiscretion,
    TemporalScope,
}

pub type DimensionSet = BTreeSet<KnowledgeDimension>;

impl KnowledgeDimension {
    pub const ALL: [KnowledgeDimension; 9] = [
        KnowledgeDimension::NormativeKnowledge,
        KnowledgeDimension::LegalElementsAndConsequences,
        KnowledgeDimension::ConceptualKnowledge,
        KnowledgeDimension::SystemicKnowledge,
        KnowledgeDimension::BoundaryAndDistinction,
        KnowledgeDimension::ValueAndPrinciples,
        KnowledgeDimension::SubjectObjectRelations,
        KnowledgeDimension::InterpretationAndDiscretion,
        KnowledgeDimension::TemporalScope,
    ];

    pub fn all() -> DimensionSet {
        Self::ALL.into_iter().collect()
    }

    /// Stable serialization key.
    pub fn key(self) -> &'static str {
        use KnowledgeDimension::*;
        match self {
            NormativeKnowledge => "normative_knowledge",
            LegalElementsAndConsequences => "legal_elements_and_consequences",
            ConceptualKnowledge => "conceptual_knowledge",
            SystemicKnowledge => "systemic_knowledge",
            BoundaryAndDistinction => "boundary_and_distinction",
            ValueAndPrinciples => "value_and_principles",
            SubjectObjectRelations => "subject_object_relations",
            InterpretationAndDiscretion => "interpretation_and_discretion",
            TemporalScope => "temporal_scope",
        }
    }

    pub fn title(self) -> &'static str {
        use KnowledgeDimension::*;
        match self {
            NormativeKnowledge => "Normative Knowledge",
            LegalElementsAndConsequences => "Legal Elements and Consequences",
            ConceptualKnowledge => "Conceptual Knowledge",
            SystemicKnowledge => "Systemic Knowledge",
            BoundaryAndDistinction => "Boundary and Distinction",
            ValueAndPrinciples => "Value and Principles",
            SubjectObjectRelations => "Subject-Object Relations",
            InterpretationAndDiscretion => "Interpretation and Discretion",
            TemporalScope => "Temporal Scope",
        }
    }

    pub fn constraint(self) -> &'static str {
        use KnowledgeDimension::*;
        match self {
            NormativeKnowledge => "what the provision requires, permits or prohibits, and whether it is an empowering, obligatory or prohibitive norm",
            LegalElementsAndConsequences => "the constituent elements (conduct, subject, intent, protected interest, result) and the legal consequences that follow from them",
            ConceptualKnowledge => "the precise meaning of the key legal terms and how they differ from neighbouring notions",
            SystemicKnowledge => "how the provision relates to other articles of the same or related laws",
            BoundaryAndDistinction => "where the provision applies and where it does not, argued through contrasting cases",
            ValueAndPrinciples => "the legal principles and values the provision embodies",
            SubjectObjectRelations => "the responsible subjects, their counterparts and the legal relationship between them",
            InterpretationAndDiscretion => "how ambiguous wording is interpreted and how much discretion it leaves to the adjudicator",
            TemporalScope => "when the provision is in force, including its effective date and any retroactive effect",
        }
    }

    /// Accepts the key, the title, or any spelling that normalizes to one of
    /// them (case, spaces, hyphens and underscores are ignored).
    pub fn from_label(label: &str) -> Option<Self> {
        let norm = normalize(label);
        Self::ALL
            .into_iter()
            .find(|d| normalize(d.key()) == norm || normalize(d.title()) == norm)
    }
}

impl fmt::Display for KnowledgeDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statute {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedPair {
    pub statute_id: String,
    pub dimension: KnowledgeDimension,
    pub instruction: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthesisError {
    #[error("statute text is empty")]
    EmptyStatute,
    #[error("no knowledge dimensions requested")]
    EmptyDimensionSet,
    #[error("synthesis output is malformed: {0}")]
    MalformedOutput(String),
    #[error("unknown knowledge dimension `{0}`")]
    UnknownDimension(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPrompt {
    pub system: String,
    pub user: String,
}

/// Marker that identifies a synthesis prompt (used by mock endpoints).
pub const PROMPT_MARKER: &str = "Knowledge dimensions to cover";

const SYSTEM_PROMPT: &str = "You are a senior legal scholar who writes training material for legal language models. \
Given one statutory provision, analyse it dimension by dimension and write one instruction and one response per requested dimension. \
Instructions must be answerable from the provision and general legal knowledge; responses must be legally grounded and state their reasoning explicitly.";

pub fn build_synthesis_prompt(statute: &Statute, dims: &DimensionSet) -> Result<SynthesisPrompt, SynthesisError> {
    if statute.text.trim().is_empty() {
        return Err(SynthesisError::EmptyStatute);
    }
    if dims.is_empty() {
        return Err(SynthesisError::EmptyDimensionSet);
    }
    let mut user = String::new();
    let _ = write!(
        user,
        "Statute `{}`:\n<<<\n{}\n>>>\n\n{} (write exactly one instruction-response pair per dimension; each dimension is a hard constraint on its pair):\n",
        statute.id, statute.text.trim(), PROMPT_MARKER
    );
    for (i, d) in dims.iter().enumerate() {
        let _ = writeln!(user, "{}. {} ({}): {}.", i + 1, d.key(), d.title(), d.constraint());
    }
    let _ = write!(
        user,
        "\nOutput format: return only a JSON array of exactly {} objects, one per dimension above and in the same order, each shaped as\n\
{{\"dimension\": \"<dimension key>\", \"instruction\": \"<question or task grounded in the statute>\", \"output\": \"<answer with explicit legal reasoning>\"}}\n\
Do not output any additional content.",
        dims.len()
    );
    Ok(SynthesisPrompt { system: SYSTEM_PROMPT.to_string(), user })
}

/// Dimension keys listed in a prompt produced by [`build_synthesis_prompt`].
pub fn prompt_dimensions(user_prompt: &str) -> DimensionSet {
    user_prompt
        .lines()
        .filter_map(|line| {
            let (num, rest) = line.split_once(". ")?;
            num.parse::<usize>().ok()?;
            let key = rest.split_whitespace().next()?;
            KnowledgeDimension::from_label(key)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: DimensionSet,
    pub missing: DimensionSet,
    pub duplicated: DimensionSet,
    /// Dimensions present in the pairs but not requested.
    pub extraneous: DimensionSet,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.duplicated.is_empty() && self.extraneous.is_empty()
    }
}

pub fn validate_dimension_coverage(pairs: &[SynthesizedPair], dims: &DimensionSet) -> CoverageReport {
    let mut report = CoverageReport::default();
    for p in pairs {
        if !dims.contains(&p.dimension) {
            report.extraneous.insert(p.dimension);
        } else if !report.covered.insert(p.dimension) {
            report.duplicated.insert(p.dimension);
        }
    }
    report.missing = dims.difference(&report.covered).copied().collect();
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSynthesis {
    /// At most one pair per requested dimension, in response order.
    pub pairs: Vec<SynthesizedPair>,
    /// Coverage of the raw response (before de-duplication).
    pub coverage: CoverageReport,
}

#[derive(Deserialize)]
struct RawPair {
    dimension: String,
    instruction: String,
    output: String,
}

pub fn parse_synthesis_output(
    response: &str,
    statute_id: &str,
    dims: &DimensionSet,
) -> Result<ParsedSynthesis, SynthesisError> {
    let (start, end) = match (response.find('['), response.rfind(']')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(SynthesisError::MalformedOutput("no JSON array found".to_string())),
    };
    let raw: Vec<RawPair> = serde_json::from_str(&response[start..=end])
        .map_err(|e| SynthesisError::MalformedOutput(format!("{e}")))?;

    let mut all = Vec::with_capacity(raw.len());
    for r in raw {
        let dimension = KnowledgeDimension::from_label(&r.dimension)
            .ok_or_else(|| SynthesisError::UnknownDimension(r.dimension.clone()))?;
        if r.instruction.trim().is_empty() || r.output.trim().is_empty() {
            return Err(SynthesisError::MalformedOutput(format!(
                "empty instruction or output for `{}`",
                dimension.key()
            )));
        }
        all.push(SynthesizedPair {
            statute_id: statute_id.to_string(),
            dimension,
            instruction: r.instruction.trim().to_string(),
            output: r.output.trim().to_string(),
        });
    }
    let coverage = validate_dimension_coverage(&all, dims);
    let mut seen = DimensionSet::new();
    let pairs = all
        .into_iter()
        .filter(|p| dims.contains(&p.dimension) && seen.insert(p.dimension))
        .collect();
    Ok(ParsedSynthesis { pairs, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn article30() -> Statute {
        Statute {
            id: "criminal-law-art-30".into(),
            text: "A company, enterprise, institution, state organ or organization that commits an act endangering society shall bear criminal responsibility if the law prescribes it as a unit crime.".into(),
        }
    }

    fn response_for(dims: &[KnowledgeDimension]) -> String {
        let items: Vec<String> = dims
            .iter()
            .map(|d| format!(r#"{{"dimension":"{}","instruction":"Q about {}","output":"A about {}"}}"#, d.key(), d.title(), d.title()))
            .collect();
        format!("[{}]", items.join(","))
    }

    #[test]
    fn nine_dimensions() {
        assert_eq!(KnowledgeDimension::all().len(), 9);
        for d in KnowledgeDimension::ALL {
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(json, format!("\"{}\"", d.key()));
            assert_eq!(KnowledgeDimension::from_label(d.title()), Some(d));
            assert_eq!(KnowledgeDimension::from_label(d.key()), Some(d));
        }
        assert_eq!(KnowledgeDimension::from_label("Procedural"), None);
    }

    #[test]
    fn prompt_lists_all_nine_constraints() {
        let p = build_synthesis_prompt(&article30(), &KnowledgeDimension::all()).unwrap();
        assert!(p.user.contains("unit crime"));
        assert_eq!(prompt_dimensions(&p.user), KnowledgeDimension::all());
        let numbered = p.user.lines().filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<u8>().is_ok())).count();
        assert_eq!(numbered, 9);
        assert!(p.user.contains("exactly 9 objects"));
    }

    #[test]
    fn prompt_with_single_dimension() {
        let dims: DimensionSet = [KnowledgeDimension::TemporalScope].into_iter().collect();
        let p = build_synthesis_prompt(&article30(), &dims).unwrap();
        assert_eq!(prompt_dimensions(&p.user), dims);
        assert!(p.user.contains("1. temporal_scope"));
        assert!(!p.user.contains("2. "));
    }

    #[test]
    fn prompt_errors() {
        assert_eq!(build_synthesis_prompt(&article30(), &DimensionSet::new()), Err(SynthesisError::EmptyDimensionSet));
        let empty = Statute { id: "x".into(), text: " ".into() };
        assert_eq!(build_synthesis_prompt(&empty, &KnowledgeDimension::all()), Err(SynthesisError::EmptyStatute));
    }

    #[test]
    fn parse_full_response() {
        let dims = KnowledgeDimension::all();
        let text = format!("Here you go:\n```json\n{}\n```", response_for(&KnowledgeDimension::ALL));
        let parsed = parse_synthesis_output(&text, "art30", &dims).unwrap();
        assert_eq!(parsed.pairs.len(), 9);
        assert!(parsed.coverage.is_complete());
        assert!(parsed.pairs.iter().all(|p| p.statute_id == "art30"));
    }

    #[test]
    fn parse_reports_gap() {
        let dims = KnowledgeDimension::all();
        let text = response_for(&KnowledgeDimension::ALL[..8]);
        let parsed = parse_synthesis_output(&text, "art30", &dims).unwrap();
        assert_eq!(parsed.pairs.len(), 8);
        assert_eq!(parsed.coverage.missing, [KnowledgeDimension::TemporalScope].into_iter().collect());
    }

    #[test]
    fn parse_rejects_unknown_label() {
        let text = r#"[{"dimension":"Procedural","instruction":"q","output":"a"}]"#;
        assert_eq!(
            parse_synthesis_output(text, "s", &KnowledgeDimension::all()),
            Err(SynthesisError::UnknownDimension("Procedural".into()))
        );
    }

    #[test]
    fn parse_rejects_free_text() {
        assert!(matches!(
            parse_synthesis_output("Normative Knowledge: it is obligatory.", "s", &KnowledgeDimension::all()),
            Err(SynthesisError::MalformedOutput(_))
        ));
        assert!(matches!(
            parse_synthesis_output(r#"[{"dimension":"temporal_scope"}]"#, "s", &KnowledgeDimension::all()),
            Err(SynthesisError::MalformedOutput(_))
        ));
    }

    #[test]
    fn parse_drops_duplicates_and_unrequested() {
        use KnowledgeDimension::*;
        let dims: DimensionSet = [NormativeKnowledge].into_iter().collect();
        let text = response_for(&[NormativeKnowledge, NormativeKnowledge, TemporalScope]);
        let parsed = parse_synthesis_output(&text, "s", &dims).unwrap();
        assert_eq!(parsed.pairs.len(), 1);
        assert!(parsed.coverage.duplicated.contains(&NormativeKnowledge));
        assert!(parsed.coverage.extraneous.contains(&TemporalScope));
    }

    #[test]
    fn coverage_report() {
        use KnowledgeDimension::*;
        let pair = |d| SynthesizedPair { statute_id: "s".into(), dimension: d, instruction: "q".into(), output: "a".into() };
        let all = KnowledgeDimension::all();
        let full: Vec<_> = KnowledgeDimension::ALL.into_iter().map(pair).collect();
        assert!(validate_dimension_coverage(&full, &all).is_complete());

        let dup = vec![pair(NormativeKnowledge), pair(NormativeKnowledge)];
        let r = validate_dimension_coverage(&dup, &all);
        assert_eq!(r.duplicated, [NormativeKnowledge].into_iter().collect());

        let r = validate_dimension_coverage(&[], &all);
        assert_eq!(r.missing, all);
        assert!(r.covered.is_empty());
    }
}
