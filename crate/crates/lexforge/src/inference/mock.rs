use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use lexforge_core::enhance::{self, KnowledgeDimension};
use lexforge_core::filter::FilterRuleSet;
use lexforge_core::scoring;

use super::{ChatBackend, ChatRequest, Completion, InferenceError};
use crate::hash::stable_hash;

type Reply = dyn Fn(&ChatRequest, usize) -> Result<Completion, InferenceError> + Send + Sync;

/// In-process backend with a scripted reply function. Tracks call count and
/// the peak number of concurrent calls.
pub struct MockBackend {
    reply: Box<Reply>,
    delay: Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(reply: impl Fn(&ChatRequest) -> Result<Completion, InferenceError> + Send + Sync + 'static) -> Self {
        Self::with_call_index(move |req, _| reply(req))
    }

    /// Like [`MockBackend::new`] with the 0-based call number passed along.
    pub fn with_call_index(reply: impl Fn(&ChatRequest, usize) -> Result<Completion, InferenceError> + Send + Sync + 'static) -> Self {
        Self {
            reply: Box::new(reply),
            delay: Duration::ZERO,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers `content`.
    pub fn fixed(content: impl Into<String>) -> Self {
        let content = content.into();
        Self::new(move |_| Ok(Completion { content: content.clone(), logprob: None }))
    }

    /// Answers call `i` with HTTP `statuses[i]` while the script lasts
    /// (200 passes through), then with `content`.
    pub fn scripted(statuses: Vec<u16>, content: impl Into<String>) -> Self {
        let content = content.into();
        Self::with_call_index(move |_, i| match statuses.get(i) {
            Some(&status) if status != 200 => Err(InferenceError::Endpoint { status, body: "scripted failure".into() }),
            _ => Ok(Completion { content: content.clone(), logprob: None }),
        })
    }

    /// Deterministic stand-in for every endpoint the pipeline talks to.
    pub fn pipeline() -> Self {
        Self::new(|req| Ok(mock_reply(req)))
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<Completion, InferenceError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = (self.reply)(req, index);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Judge score from surface features of the fragment: length, markup share
/// and a hash bit. Stable across runs and platforms.
pub fn mock_judge_score(fragment: &str) -> u8 {
    let lower = fragment.to_lowercase();
    if lower.contains("http://") || lower.contains("https://") || lower.contains("copyright") {
        return 0;
    }
    let chars = fragment.chars().count();
    let mut score = 1u8;
    if chars >= 60 {
        score += 1;
    }
    if chars >= 150 {
        score += 1;
    }
    if FilterRuleSet::default().special_ratio(fragment) < 0.05 {
        score += 1;
    }
    if stable_hash(&[fragment.as_bytes()]) % 3 == 0 {
        score += 1;
    }
    score.min(scoring::MAX_SCORE)
}

fn statute_id(prompt: &str) -> &str {
    prompt
        .strip_prefix("Statute `")
        .and_then(|rest| rest.split_once('`'))
        .map_or("statute", |(id, _)| id)
}

fn synthesis_reply(prompt: &str) -> String {
    let id = statute_id(prompt);
    let items: Vec<serde_json::Value> = enhance::prompt_dimensions(prompt)
        .into_iter()
        .map(|d: KnowledgeDimension| {
            serde_json::json!({
                "dimension": d.key(),
                "instruction": format!("From the perspective of {}, what does provision {id} require?", d.title().to_lowercase()),
                "output": format!("Under provision {id}, {}: the provision is read in light of its text and purpose.", d.constraint()),
            })
        })
        .collect();
    serde_json::to_string(&items).expect("json values serialize")
}

/// Picks an answer for `prompt`. Multiple-choice prompts (lines such as
/// `A. ...`) get one of the option letters; otherwise a window of the prompt
/// is echoed. The choice depends on the prompt and the seed only.
pub fn mock_generation(prompt: &str, seed: Option<u64>) -> String {
    let seed = seed.unwrap_or(0).to_le_bytes();
    let h = stable_hash(&[prompt.as_bytes(), &seed]);
    let options: Vec<char> = prompt
        .lines()
        .filter_map(|l| {
            let mut c = l.trim_start().chars();
            let letter = c.next()?;
            (letter.is_ascii_uppercase() && matches!(c.next(), Some('.' | ')' | '、'))).then_some(letter)
        })
        .collect();
    if !options.is_empty() {
        return options[(h % options.len() as u64) as usize].to_string();
    }
    let chars: Vec<char> = prompt.chars().filter(|c| !c.is_control()).collect();
    if chars.is_empty() {
        return "No answer.".to_string();
    }
    let start = (h % chars.len() as u64) as usize;
    let window: String = chars[start..].iter().take(48).collect();
    let window = window.trim();
    if window.is_empty() {
        "No answer.".to_string()
    } else {
        window.to_string()
    }
}

/// Reply of the pipeline mock: rubric scores for scoring prompts, a valid
/// JSON array for synthesis prompts, and [`mock_generation`] otherwise.
pub fn mock_reply(req: &ChatRequest) -> Completion {
    let prompt = req.last_user_content();
    let content = if let Some(fragment) = scoring::prompt_fragment(prompt) {
        format!(
            "Scoring Rationale: surface features of a {}-character fragment.\nScore: {}",
            fragment.chars().count(),
            mock_judge_score(fragment)
        )
    } else if prompt.contains(enhance::PROMPT_MARKER) {
        synthesis_reply(prompt)
    } else {
        mock_generation(prompt, req.seed)
    };
    let logprob = req.logprobs_requested.then(|| -0.05 * content.chars().count() as f64);
    Completion { content, logprob }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lexforge_core::enhance::{build_synthesis_prompt, parse_synthesis_output, Statute};

    #[test]
    fn judge_replies_parse() {
        for text in ["short", "A longer fragment of text that discusses legal matters in a calm, coherent tone for a while."] {
            let prompt = scoring::build_scoring_prompt(text).unwrap();
            let reply = mock_reply(&ChatRequest::user("m", prompt));
            assert_eq!(scoring::parse_score_response(&reply.content), Ok(mock_judge_score(text)));
        }
        assert_eq!(mock_judge_score("see https://example.com"), 0);
    }

    #[test]
    fn synthesis_replies_cover_requested_dimensions() {
        let statute = Statute { id: "art-1".into(), text: "Some provision.".into() };
        let dims = [KnowledgeDimension::ALL[0], KnowledgeDimension::ALL[4]].into_iter().collect();
        let p = build_synthesis_prompt(&statute, &dims).unwrap();
        let reply = mock_reply(&ChatRequest::new("m", vec![super::super::ChatMessage::system(p.system), super::super::ChatMessage::user(p.user)]));
        let parsed = parse_synthesis_output(&reply.content, "art-1", &dims).unwrap();
        assert!(parsed.coverage.is_complete());
        assert_eq!(parsed.pairs.len(), 2);
    }

    #[test]
    fn generations_are_seeded() {
        let q = "Which applies?\nA. one\nB. two\nC. three";
        let a = mock_generation(q, Some(1));
        assert!(["A", "B", "C"].contains(&a.as_str()));
        assert_eq!(a, mock_generation(q, Some(1)));
        let distinct: std::collections::BTreeSet<String> = (0..20).map(|s| mock_generation(q, Some(s))).collect();
        assert!(distinct.len() > 1);
    }
}
