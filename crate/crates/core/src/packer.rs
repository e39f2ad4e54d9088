//! Two-stage CPT layout: stage token split, fixed-window packing, step
//! grouping at constant tokens per step, and the stage-II warmup ramp.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

pub const TOKENS_PER_STEP: u64 = 786_432;
pub const STAGE1_WINDOW: u64 = 8192;
pub const STAGE2_WINDOW: u64 = 16_384;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PackError {
    #[error("total token count must be positive")]
    EmptyCorpus,
    #[error("window {window} does not divide {tokens_per_step} tokens per step")]
    IndivisibleStep { window: u64, tokens_per_step: u64 },
    #[error("window must be positive")]
    ZeroWindow,
    #[error("stage-I share {0} is outside [0, 1]")]
    StageShare(f64),
    #[error("sequence {sequence_id} has window {found}, stage expects {expected}")]
    WindowMismatch { sequence_id: usize, found: u64, expected: u64 },
    #[error("invalid learning-rate schedule: {0}")]
    Schedule(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub tokens_per_step: u64,
    pub stage1_window: u64,
    pub stage2_window: u64,
    pub stage1_share: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            tokens_per_step: TOKENS_PER_STEP,
            stage1_window: STAGE1_WINDOW,
            stage2_window: STAGE2_WINDOW,
            stage1_share: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub window_tokens: u64,
    pub data_tokens: u64,
    pub sequences_per_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub tokens_per_step: u64,
}

fn sequences_per_step(window: u64, tokens_per_step: u64) -> Result<u64, PackError> {
    if window == 0 {
        return Err(PackError::ZeroWindow);
    }
    if tokens_per_step % window != 0 {
        return Err(PackError::IndivisibleStep { window, tokens_per_step });
    }
    Ok(tokens_per_step / window)
}

/// Splits `total_tokens` between the two stages. The stage-I share is taken to
/// parts-per-million and stage I receives the half-up rounded product.
pub fn make_stage_plan(total_tokens: u64, config: &StageConfig) -> Result<StagePlan, PackError> {
    if total_tokens == 0 {
        return Err(PackError::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&config.stage1_share) {
        return Err(PackError::StageShare(config.stage1_share));
    }
    let s1 = sequences_per_step(config.stage1_window, config.tokens_per_step)?;
    let s2 = sequences_per_step(config.stage2_window, config.tokens_per_step)?;
    let ppm = libm::round(config.stage1_share * 1e6) as u128;
    let stage1 = ((total_tokens as u128 * ppm + 500_000) / 1_000_000) as u64;
    Ok(StagePlan {
        stages: alloc::vec![
            Stage { window_tokens: config.stage1_window, data_tokens: stage1, sequences_per_step: s1 },
            Stage {
                window_tokens: config.stage2_window,
                data_tokens: total_tokens - stage1,
                sequences_per_step: s2,
            },
        ],
        tokens_per_step: config.tokens_per_step,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocLen {
    pub doc_id: String,
    pub tokens: u64,
}

impl From<&Document> for DocLen {
    fn from(d: &Document) -> Self {
        Self { doc_id: d.id.clone(), tokens: d.token_count }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    /// Offset of this span within its document.
    pub token_offset: u64,
    pub token_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub sequence_id: usize,
    pub window: u64,
    pub spans: Vec<Span>,
    pub pad_tokens: u64,
}

impl PackedSequence {
    pub fn content_tokens(&self) -> u64 {
        self.spans.iter().map(|s| s.token_len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingPlan {
    pub window: u64,
    pub sequences: Vec<PackedSequence>,
}

impl PackingPlan {
    pub fn content_tokens(&self) -> u64 {
        self.sequences.iter().map(PackedSequence::content_tokens).sum()
    }

    pub fn pad_tokens(&self) -> u64 {
        self.sequences.iter().map(|s| s.pad_tokens).sum()
    }

    pub fn pad_fraction(&self) -> f64 {
        let cap = self.window * self.sequences.len() as u64;
        if cap == 0 {
            0.0
        } else {
            self.pad_tokens() as f64 / cap as f64
        }
    }
}

/// Fills windows in stream order. A document that does not fit the space left
/// in the current window is split there and continues in the next one, so
/// only the last sequence carries padding. Zero-length documents produce no
/// span.
pub fn pack_documents<I>(docs: I, window: u64) -> Result<PackingPlan, PackError>
where
    I: IntoIterator,
    I::Item: Into<DocLen>,
{
    if window == 0 {
        return Err(PackError::ZeroWindow);
    }
    let mut sequences = Vec::new();
    let mut current: Vec<Span> = Vec::new();
    let mut used = 0u64;
    for doc in docs {
        let doc: DocLen = doc.into();
        let mut offset = 0u64;
        while offset < doc.tokens {
            let take = (doc.tokens - offset).min(window - used);
            current.push(Span { doc_id: doc.doc_id.clone(), token_offset: offset, token_len: take });
            offset += take;
            used += take;
            if used == window {
                sequences.push(PackedSequence {
                    sequence_id: sequences.len(),
                    window,
                    spans: core::mem::take(&mut current),
                    pad_tokens: 0,
                });
                used = 0;
            }
        }
    }
    if !current.is_empty() {
        sequences.push(PackedSequence {
            sequence_id: sequences.len(),
            window,
            spans: current,
            pad_tokens: window - used,
        });
    }
    Ok(PackingPlan { window, sequences })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepManifest {
    pub step: usize,
    pub sequence_ids: Vec<usize>,
    /// Window capacity of the step, padding included.
    pub tokens: u64,
    pub partial: bool,
}

pub fn step_batches(plan: &PackingPlan, stage: &Stage) -> Result<Vec<StepManifest>, PackError> {
    if let Some(s) = plan.sequences.iter().find(|s| s.window != stage.window_tokens) {
        return Err(PackError::WindowMismatch {
            sequence_id: s.sequence_id,
            found: s.window,
            expected: stage.window_tokens,
        });
    }
    if stage.sequences_per_step == 0 {
        return Err(PackError::ZeroWindow);
    }
    Ok(plan
        .sequences
        .chunks(stage.sequences_per_step as usize)
        .enumerate()
        .map(|(step, chunk)| StepManifest {
            step,
            sequence_ids: chunk.iter().map(|s| s.sequence_id).collect(),
            tokens: chunk.len() as u64 * stage.window_tokens,
            partial: (chunk.len() as u64) < stage.sequences_per_step,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub stage1_terminal_lr: f64,
    pub stage2_peak_factor: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(stage1_terminal_lr: f64, warmup_steps: u64) -> Self {
        Self { stage1_terminal_lr, stage2_peak_factor: 1.1, warmup_steps }
    }

    pub fn validate(&self) -> Result<(), PackError> {
        if !(self.stage1_terminal_lr > 0.0) || !self.stage1_terminal_lr.is_finite() {
            return Err(PackError::Schedule("terminal learning rate must be positive"));
        }
        if !(self.stage2_peak_factor > 1.0) || !self.stage2_peak_factor.is_finite() {
            return Err(PackError::Schedule("peak factor must exceed 1"));
        }
        if self.warmup_steps == 0 {
            return Err(PackError::Schedule("warmup needs at least one step"));
        }
        Ok(())
    }

    pub fn peak(&self) -> f64 {
        self.stage1_terminal_lr * self.stage2_peak_factor
    }
}

/// Linear ramp from the stage-I terminal rate to the peak, then flat.
pub fn warmup_lr(step: u64, sched: &LrSchedule) -> f64 {
    if step >= sched.warmup_steps {
        return sched.peak();
    }
    let t = step as f64 / sched.warmup_steps as f64;
    sched.stage1_terminal_lr + (sched.peak() - sched.stage1_terminal_lr) * t
}
