//! Ratio-controlled down-sampling to per-source token budgets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Document, EntrySource, Lang, ManifestEntry, Source};

pub const CPT_RATIO_TOLERANCE: f64 = 0.02;
pub const POST_TRAINING_MIX_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceKey {
    pub lang: Lang,
    pub source: Source,
}

impl SourceKey {
    fn stream_id(self) -> u64 {
        let lang = match self.lang {
            Lang::Zh => 0,
            Lang::En => 1,
        };
        let source = Source::ALL.iter().position(|s| *s == self.source).unwrap_or(0) as u64;
        lang * 16 + source
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub lang: Lang,
    pub source: Source,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlan {
    pub lang: Lang,
    pub source: Source,
    pub available_tokens: u64,
    pub budget_tokens: u64,
    pub sampling_fraction: f64,
}

impl SourcePlan {
    pub fn key(&self) -> SourceKey {
        SourceKey { lang: self.lang, source: self.source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub sources: Vec<SourcePlan>,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn get(&self, key: SourceKey) -> Option<&SourcePlan> {
        self.sources.iter().find(|p| p.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MixError {
    #[error("budget {budget} for {lang:?}/{corpus_source} exceeds the {available} available tokens")]
    BudgetExceedsAvailability { lang: Lang, corpus_source: Source, budget: u64, available: u64 },
    #[error("budget for {lang:?}/{corpus_source} must be positive")]
    ZeroBudget { lang: Lang, corpus_source: Source },
    #[error("no budget given for {lang:?}/{corpus_source}")]
    MissingBudget { lang: Lang, corpus_source: Source },
    #[error("budget for {lang:?}/{corpus_source} has no manifest entry")]
    UnknownBudgetSource { lang: Lang, corpus_source: Source },
    #[error("manifest entry {0} is not a token-denominated corpus source")]
    NotATokenEntry(usize),
    #[error("document `{doc_id}` comes from a source that is not in the plan")]
    UnknownSource { doc_id: String },
    #[error("ratio targets are invalid: {0}")]
    InvalidTargets(&'static str),
}

/// Availability manifest of a document set: one token entry per
/// `(lang, source)` present, in key order.
pub fn manifest_from_documents(docs: &[Document]) -> CorpusManifest {
    let mut by_key: BTreeMap<SourceKey, (u64, u64)> = BTreeMap::new();
    for d in docs {
        let e = by_key.entry(SourceKey { lang: d.lang, source: d.source }).or_default();
        e.0 += 1;
        e.1 += d.token_count;
    }
    CorpusManifest::from_entries(
        by_key
            .into_iter()
            .map(|(k, (n, tokens))| ManifestEntry {
                lang: k.lang,
                source: EntrySource::Corpus(k.source),
                n_documents: n,
                total_tokens: Some(tokens),
                sampled_tokens: None,
            })
            .collect(),
    )
}

/// Scales each source's availability by the sampling rate (sampled / total)
/// of the matching row in `reference`; sources absent there keep everything.
/// Budgets are rounded half up and kept within `[1, available]`.
pub fn budgets_from_rates(available: &CorpusManifest, reference: &CorpusManifest) -> Result<Vec<Budget>, MixError> {
    let mut rates: BTreeMap<SourceKey, (u64, u64)> = BTreeMap::new();
    for e in &reference.entries {
        if let (EntrySource::Corpus(source), Some(total), Some(sampled)) = (e.source, e.total_tokens, e.sampled_tokens) {
            let r = rates.entry(SourceKey { lang: e.lang, source }).or_default();
            r.0 += sampled;
            r.1 += total;
        }
    }
    available
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (EntrySource::Corpus(source), Some(avail)) = (e.source, e.total_tokens) else {
                return Err(MixError::NotATokenEntry(i));
            };
            let tokens = match rates.get(&SourceKey { lang: e.lang, source }) {
                Some(&(sampled, total)) if total > 0 => {
                    ((avail as u128 * sampled as u128 * 2 + total as u128) / (2 * total as u128)) as u64
                }
                _ => avail,
            };
            Ok(Budget { lang: e.lang, source, tokens: tokens.clamp(1, avail.max(1)) })
        })
        .collect()
}

/// Budgets equal to the manifest's `sampled_tokens` column.
pub fn budgets_from_manifest(manifest: &CorpusManifest) -> Result<Vec<Budget>, MixError> {
    manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| match (e.source, e.sampled_tokens) {
            (EntrySource::Corpus(source), Some(tokens)) => Ok(Budget { lang: e.lang, source, tokens }),
            _ => Err(MixError::NotATokenEntry(i)),
        })
        .collect()
}

pub fn plan_sampling(manifest: &CorpusManifest, budgets: &[Budget], seed: u64) -> Result<SamplingPlan, MixError> {
    let mut available: BTreeMap<SourceKey, u64> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let (EntrySource::Corpus(source), Some(total)) = (e.source, e.total_tokens) else {
            return Err(MixError::NotATokenEntry(i));
        };
        let key = SourceKey { lang: e.lang, source };
        if !available.contains_key(&key) {
            order.push(key);
        }
        *available.entry(key).or_default() += total;
    }
    for b in budgets {
        if !available.contains_key(&SourceKey { lang: b.lang, source: b.source }) {
            return Err(MixError::UnknownBudgetSource { lang: b.lang, corpus_source: b.source });
        }
    }
    let mut sources = Vec::with_capacity(order.len());
    for key in order {
        let available_tokens = available[&key];
        let budget_tokens = budgets
            .iter()
            .filter(|b| b.lang == key.lang && b.source == key.source)
            .map(|b| b.tokens)
            .reduce(|a, b| a + b)
            .ok_or(MixError::MissingBudget { lang: key.lang, corpus_source: key.source })?;
        if budget_tokens == 0 {
            return Err(MixError::ZeroBudget { lang: key.lang, corpus_source: key.source });
        }
        if budget_tokens > available_tokens {
            return Err(MixError::BudgetExceedsAvailability {
                lang: key.lang,
                corpus_source: key.source,
                budget: budget_tokens,
                available: available_tokens,
            });
        }
        sources.push(SourcePlan {
            lang: key.lang,
            source: key.source,
            available_tokens,
            budget_tokens,
            sampling_fraction: budget_tokens as f64 / available_tokens as f64,
        });
    }
    Ok(SamplingPlan { sources, seed })
}

/// Target shares as `[first, second]` pairs, e.g. zh:en = `[0.7, 0.3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioTargets {
    pub zh_en: [f64; 2],
    pub domain_general: [f64; 2],
    pub tolerance: f64,
}

impl Default for RatioTargets {
    fn default() -> Self {
        Self { zh_en: [0.7, 0.3], domain_general: [0.6, 0.4], tolerance: CPT_RATIO_TOLERANCE }
    }
}

impl RatioTargets {
    pub fn validate(&self) -> Result<(), MixError> {
        let sums_to_one = |p: [f64; 2]| p.iter().all(|v| (0.0..=1.0).contains(v)) && libm::fabs(p[0] + p[1] - 1.0) < 1e-9;
        if !sums_to_one(self.zh_en) || !sums_to_one(self.domain_general) {
            return Err(MixError::InvalidTargets("each target pair must be two shares summing to 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(MixError::InvalidTargets("tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareCheck {
    pub achieved: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ShareCheck {
    fn new(achieved: f64, target: f64, tolerance: f64) -> Self {
        Self { achieved, target, tolerance, passed: libm::fabs(achieved - target) <= tolerance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub zh_share: ShareCheck,
    pub domain_share: ShareCheck,
    pub passed: bool,
}

pub fn check_ratios(plan: &SamplingPlan, targets: &RatioTargets) -> RatioReport {
    let total: u64 = plan.sources.iter().map(|s| s.budget_tokens).sum();
    let share = |pred: &dyn Fn(&SourcePlan) -> bool| {
        if total == 0 {
            return 0.0;
        }
        plan.sources.iter().filter(|s| pred(s)).map(|s| s.budget_tokens).sum::<u64>() as f64 / total as f64
    };
    let zh_share = ShareCheck::new(share(&|s| s.lang == Lang::Zh), targets.zh_en[0], targets.tolerance);
    let domain_share = ShareCheck::new(share(&|s| !s.source.is_general()), targets.domain_general[0], targets.tolerance);
    RatioReport { zh_share, domain_share, passed: zh_share.passed && domain_share.passed }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub general_samples: u64,
    pub domain_samples: u64,
    pub general_share: ShareCheck,
    pub passed: bool,
}

/// Compares the general:domain sample ratio of an instruction manifest
/// against `general_target` (0.7 for a 7:3 mix).
pub fn check_post_training_mix(manifest: &CorpusManifest, general_target: f64, tolerance: f64) -> MixReport {
    let (mut general, mut domain) = (0u64, 0u64);
    for e in &manifest.entries {
        if e.source.is_general() {
            general += e.n_documents;
        } else {
            domain += e.n_documents;
        }
    }
    let total = general + domain;
    let achieved = if total == 0 { 0.0 } else { general as f64 / total as f64 };
    let general_share = ShareCheck::new(achieved, general_target, tolerance);
    MixReport { general_samples: general, domain_samples: domain, general_share, passed: general_share.passed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSampleStats {
    pub lang: Lang,
    pub source: Source,
    pub docs_in: usize,
    pub docs_out: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub target_tokens: f64,
}

impl SourceSampleStats {
    /// Relative deviation of sampled tokens from the target.
    pub fn relative_error(&self) -> f64 {
        if self.target_tokens == 0.0 {
            0.0
        } else {
            libm::fabs(self.tokens_out as f64 - self.target_tokens) / self.target_tokens
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampledCorpus {
    /// Ordered by (plan source order, input order).
    pub docs: Vec<Document>,
    pub stats: Vec<SourceSampleStats>,
}

/// Seeded token-budget sampling.
///
/// Within each source every document draws a random priority from a ChaCha
/// stream keyed by `(seed, source)`. Documents are admitted in priority order
/// while the running token sum stays at or below `fraction * source_tokens`;
/// the first document that would overshoot is admitted only if that lands
/// closer to the target, and selection stops there. Every document has the
/// same admission chance regardless of length, and the achieved total is
/// within half a document of the target.
pub fn execute_sampling(docs: Vec<Document>, plan: &SamplingPlan) -> Result<SampledCorpus, MixError> {
    let mut groups: BTreeMap<usize, Vec<(usize, Document)>> = BTreeMap::new();
    for (idx, doc) in docs.into_iter().enumerate() {
        let key = SourceKey { lang: doc.lang, source: doc.source };
        let Some(slot) = plan.sources.iter().position(|p| p.key() == key) else {
            return Err(MixError::UnknownSource { doc_id: doc.id });
        };
        groups.entry(slot).or_default().push((idx, doc));
    }

    let mut out = SampledCorpus::default();
    for (slot, members) in groups {
        let sp = &plan.sources[slot];
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(sp.key().stream_id());
        let tokens_in: u64 = members.iter().map(|(_, d)| d.token_count).sum();
        let target = sp.sampling_fraction * tokens_in as f64;

        let mut order: Vec<(u64, usize)> = (0..members.len()).map(|i| (rng.random::<u64>(), i)).collect();
        order.sort_unstable();
        let mut admitted = alloc::vec![false; members.len()];
        let mut running = 0u64;
        for (_, i) in order {
            let t = members[i].1.token_count;
            let next = (running + t) as f64;
            if next <= target {
                admitted[i] = true;
                running += t;
            } else {
                if next - target < target - running as f64 {
                    admitted[i] = true;
                    running += t;
                }
                break;
            }
        }

        let docs_in = members.len();
        let mut docs_out = 0;
        for ((_, doc), keep) in members.into_iter().zip(admitted) {
            if keep {
                docs_out += 1;
                out.docs.push(doc);
            }
        }
        out.stats.push(SourceSampleStats {
            lang: sp.lang,
            source: sp.source,
            docs_in,
            docs_out,
            tokens_in,
            tokens_out: running,
            target_tokens: target,
        });
    }
    Ok(out)
}
