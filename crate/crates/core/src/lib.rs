//! Allocation-only core of the lexforge toolkit.
//!
//! Everything here is pure: corpus accounting, rule filters, judge prompts and
//! their response parsers, ratio-controlled sampling, CPT packing, PSFT batch
//! scheduling, HIPO mining and loss evaluation, and the task metric suite.
//! IO, HTTP and the CLI live in the `lexforge` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod enhance;
pub mod filter;
pub mod hipo;
pub mod metrics;
pub mod mixer;
pub mod packer;
pub mod psft;
pub mod scoring;

pub use corpus::{
    count_tokens, CorpusManifest, CounterConfig, Document, InstructionSample, Lang, PreferencePair,
    Source,
};
