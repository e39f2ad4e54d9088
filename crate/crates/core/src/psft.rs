//! PSFT data schedule: stage-1 core-task batches and stage-2 batches that mix
//! a fixed share of core samples into downstream training.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const CORE_STREAM: u64 = 1;
const DOWNSTREAM_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Core,
    Downstream,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("{0:?} dataset is empty but its batch quota is positive")]
    EmptyDataset(Side),
    #[error("mixing_lambda {0} is outside [0, 1]")]
    Lambda(f64),
    #[error("batch_size must be at least 1")]
    ZeroBatch,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
}

fn default_epochs() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub mixing_lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
}

impl CurriculumConfig {
    pub fn new(mixing_lambda: f64, batch_size: usize, seed: u64) -> Self {
        Self { mixing_lambda, batch_size, seed, epochs: 1 }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(0.0..=1.0).contains(&self.mixing_lambda) {
            return Err(ScheduleError::Lambda(self.mixing_lambda));
        }
        if self.batch_size == 0 {
            return Err(ScheduleError::ZeroBatch);
        }
        if self.epochs == 0 {
            return Err(ScheduleError::ZeroEpochs);
        }
        Ok(())
    }

    /// Core samples per full batch: `λ·B` rounded half up, clamped to `[0, B]`.
    pub fn core_quota(&self) -> usize {
        let q = libm::floor(self.mixing_lambda * self.batch_size as f64 + 0.5);
        (q.max(0.0) as usize).min(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch<T> {
    pub core: Vec<T>,
    pub downstream: Vec<T>,
    pub partial: bool,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.core.len() + self.downstream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle of `core` cut into batches of `batch_size`; a short final
/// batch is flagged partial.
pub fn stage1_batches<T: Clone>(core: &[T], batch_size: usize, seed: u64) -> Result<Vec<Batch<T>>, ScheduleError> {
    if core.is_empty() {
        return Err(ScheduleError::EmptyDataset(Side::Core));
    }
    if batch_size == 0 {
        return Err(ScheduleError::ZeroBatch);
    }
    let mut order: Vec<usize> = (0..core.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            core: chunk.iter().map(|&i| core[i].clone()).collect(),
            downstream: Vec::new(),
            partial: chunk.len() < batch_size,
        })
        .collect())
}

/// Endless replacement-free draws from the core set, reshuffled each time it
/// is exhausted.
struct CoreCycle<'a, T> {
    items: &'a [T],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a, T: Clone> CoreCycle<'a, T> {
    fn new(items: &'a [T], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CORE_STREAM);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        Self { items, order, pos: 0, rng }
    }

    fn take(&mut self, n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.items[self.order[self.pos]].clone());
            self.pos += 1;
        }
        out
    }
}

/// Mixed batches for stage 2.
///
/// Each epoch shuffles the downstream set and consumes it once in chunks of
/// `B - quota`; every batch adds `quota` core samples. A short last chunk
/// yields a partial batch that still carries the full core quota. With
/// `λ = 1` there is no downstream share and each epoch emits
/// `ceil(|core| / B)` all-core batches.
pub fn stage2_batches<T: Clone>(core: &[T], downstream: &[T], cfg: &CurriculumConfig) -> Result<Vec<Batch<T>>, ScheduleError> {
    cfg.validate()?;
    let quota = cfg.core_quota();
    let down_quota = cfg.batch_size - quota;
    if quota > 0 && core.is_empty() {
        return Err(ScheduleError::EmptyDataset(Side::Core));
    }
    if down_quota > 0 && downstream.is_empty() {
        return Err(ScheduleError::EmptyDataset(Side::Downstream));
    }

    let mut cycle = CoreCycle::new(core, cfg.seed);
    let mut batches = Vec::new();
    if down_quota == 0 {
        let per_epoch = core.len().div_ceil(cfg.batch_size);
        for _ in 0..cfg.epochs as usize * per_epoch {
            batches.push(Batch { core: cycle.take(quota), downstream: Vec::new(), partial: false });
        }
        return Ok(batches);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(DOWNSTREAM_STREAM);
    let mut order: Vec<usize> = (0..downstream.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(down_quota) {
            batches.push(Batch {
                core: cycle.take(quota),
                downstream: chunk.iter().map(|&i| downstream[i].clone()).collect(),
                partial: chunk.len() < down_quota,
            });
        }
    }
    Ok(batches)
}

/// Core share over full batches; `None` when there are none.
pub fn mixing_stats<T>(batches: &[Batch<T>]) -> Option<f64> {
    let (core, total) = batches
        .iter()
        .filter(|b| !b.partial)
        .fold((0usize, 0usize), |(c, t), b| (c + b.core.len(), t + b.len()));
    (total > 0).then(|| core as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(n: u32) -> Vec<u32> {
        (0..n).collect()
    }

    #[test]
    fn stage1_shapes() {
        let b = stage1_batches(&ids(10), 4, 7).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(b.iter().map(|b| b.partial).collect::<Vec<_>>(), [false, false, true]);
        assert_eq!(b, stage1_batches(&ids(10), 4, 7).unwrap());
        let mut all: Vec<u32> = b.into_iter().flat_map(|b| b.core).collect();
        all.sort();
        assert_eq!(all, ids(10));
        assert_eq!(stage1_batches::<u32>(&[], 4, 0), Err(ScheduleError::EmptyDataset(Side::Core)));
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(CurriculumConfig::new(0.2, 10, 0).core_quota(), 2);
        assert_eq!(CurriculumConfig::new(0.2, 5, 0).core_quota(), 1);
        assert_eq!(CurriculumConfig::new(0.25, 2, 0).core_quota(), 1);
        assert_eq!(CurriculumConfig::new(0.0, 7, 0).core_quota(), 0);
        assert_eq!(CurriculumConfig::new(1.0, 7, 0).core_quota(), 7);
    }

    #[test]
    fn twenty_percent_mix() {
        let cfg = CurriculumConfig::new(0.2, 10, 3);
        let b = stage2_batches(&ids(30), &ids(80), &cfg).unwrap();
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|b| b.core.len() == 2 && b.downstream.len() == 8 && !b.partial));
        assert_eq!(mixing_stats(&b), Some(0.2));
    }

    #[test]
    fn zero_lambda_is_all_downstream() {
        let cfg = CurriculumConfig::new(0.0, 4, 0);
        let b = stage2_batches(&[], &ids(8), &cfg).unwrap();
        assert!(b.iter().all(|b| b.core.is_empty() && b.downstream.len() == 4));
        assert_eq!(mixing_stats(&b), Some(0.0));
    }

    #[test]
    fn full_lambda_is_all_core() {
        let cfg = CurriculumConfig { epochs: 2, ..CurriculumConfig::new(1.0, 4, 0) };
        let b = stage2_batches(&ids(10), &[], &cfg).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(mixing_stats(&b), Some(1.0));
    }

    #[test]
    fn partial_batch_keeps_core_quota() {
        let cfg = CurriculumConfig::new(0.2, 5, 1);
        let b = stage2_batches(&ids(3), &ids(10), &cfg).unwrap();
        assert_eq!(b.len(), 3);
        let last = b.last().unwrap();
        assert!(last.partial);
        assert_eq!((last.core.len(), last.downstream.len()), (1, 2));
        assert_eq!(mixing_stats(&b), Some(0.2));
    }

    #[test]
    fn missing_side_errors() {
        let cfg = CurriculumConfig::new(0.2, 10, 0);
        assert_eq!(stage2_batches(&[], &ids(5), &cfg), Err(ScheduleError::EmptyDataset(Side::Core)));
        assert_eq!(stage2_batches(&ids(5), &[], &cfg), Err(ScheduleError::EmptyDataset(Side::Downstream)));
        assert_eq!(stage2_batches(&ids(5), &ids(5), &CurriculumConfig::new(1.5, 10, 0)), Err(ScheduleError::Lambda(1.5)));
    }

    #[test]
    fn core_cycles_without_repeats_inside_a_pass() {
        let cfg = CurriculumConfig::new(0.5, 4, 9);
        let b = stage2_batches(&ids(6), &ids(12), &cfg).unwrap();
        let core: Vec<u32> = b.iter().flat_map(|b| b.core.iter().copied()).collect();
        assert_eq!(core.len(), 12);
        for pass in core.chunks(6) {
            let mut p = pass.to_vec();
            p.sort();
            assert_eq!(p, ids(6));
        }
    }

    #[test]
    fn empty_stats() {
        assert_eq!(mixing_stats::<u32>(&[]), None);
        let only_partial = vec![Batch { core: vec![1u32], downstream: vec![], partial: true }];
        assert_eq!(mixing_stats(&only_partial), None);
    }
}
