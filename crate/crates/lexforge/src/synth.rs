//! Statute enhancement over an inference backend.

use lexforge_core::corpus::{CounterConfig, Document, Lang, Source};
use lexforge_core::enhance::{self, CoverageReport, DimensionSet, KnowledgeDimension, Statute, SynthesizedPair};
use serde::{Deserialize, Serialize};

use crate::inference::{batch_complete, ChatBackend, ChatMessage, ChatRequest, EndpointConfig};

const SYNTHESIS_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatuteRecord {
    pub id: String,
    pub text: String,
    #[serde(default = "default_lang")]
    pub lang: Lang,
}

fn default_lang() -> Lang {
    Lang::Zh
}

/// `all`, or a comma-separated list of dimension keys or titles.
pub fn parse_dims(spec: &str) -> Result<DimensionSet, String> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(KnowledgeDimension::all());
    }
    let dims: DimensionSet = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| KnowledgeDimension::from_label(s.trim()).ok_or_else(|| format!("unknown knowledge dimension `{}`", s.trim())))
        .collect::<Result<_, _>>()?;
    if dims.is_empty() {
        return Err("no knowledge dimensions given".into());
    }
    Ok(dims)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatuteFailure {
    pub statute_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub statute_id: String,
    pub coverage: CoverageReport,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub statutes: usize,
    pub pairs: usize,
    pub failed: usize,
    pub incomplete: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub pairs: Vec<SynthesizedPair>,
    pub failures: Vec<StatuteFailure>,
    pub gaps: Vec<CoverageGap>,
    pub stats: SynthesisStats,
}

pub fn synthesize(statutes: &[StatuteRecord], dims: &DimensionSet, backend: &dyn ChatBackend, endpoint: &EndpointConfig) -> SynthesisRun {
    let mut run = SynthesisRun { stats: SynthesisStats { statutes: statutes.len(), ..Default::default() }, ..Default::default() };
    let prompts: Vec<_> = statutes
        .iter()
        .map(|s| enhance::build_synthesis_prompt(&Statute { id: s.id.clone(), text: s.text.clone() }, dims))
        .collect();
    let requests: Vec<ChatRequest> = prompts
        .iter()
        .filter_map(|p| p.as_ref().ok())
        .map(|p| {
            let mut req = ChatRequest::new(&endpoint.model, vec![ChatMessage::system(&p.system), ChatMessage::user(&p.user)]);
            req.max_tokens = SYNTHESIS_MAX_TOKENS;
            req
        })
        .collect();
    let mut replies = batch_complete(backend, &requests, endpoint).into_iter();

    for (statute, prompt) in statutes.iter().zip(prompts) {
        let parsed = prompt.map_err(|e| e.to_string()).and_then(|_| {
            let reply = replies.next().expect("one reply per request").map_err(|e| e.to_string())?;
            enhance::parse_synthesis_output(&reply.content, &statute.id, dims).map_err(|e| e.to_string())
        });
        match parsed {
            Ok(p) => {
                if !p.coverage.is_complete() {
                    log::warn!("statute {}: incomplete dimension coverage", statute.id);
                    run.stats.incomplete += 1;
                    run.gaps.push(CoverageGap { statute_id: statute.id.clone(), coverage: p.coverage });
                }
                run.pairs.extend(p.pairs);
            }
            Err(error) => {
                log::warn!("statute {}: {error}", statute.id);
                run.stats.failed += 1;
                run.failures.push(StatuteFailure { statute_id: statute.id.clone(), error });
            }
        }
    }
    run.stats.pairs = run.pairs.len();
    run
}

/// A synthesized pair as a corpus document, ready for scoring.
pub fn pair_document(pair: &SynthesizedPair, lang: Lang, counter: &CounterConfig) -> Document {
    Document::new(
        format!("{}#{}", pair.statute_id, pair.dimension.key()),
        format!("{}\n{}", pair.instruction, pair.output),
        lang,
        Source::ArticlesInterpretations,
        counter,
    )
}
