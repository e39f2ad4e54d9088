//! Std companion to `lexforge-core`: file formats, the chat-completion
//! client, endpoint-backed drivers and the end-to-end pipeline.

pub mod config;
pub mod evaluate;
pub mod hash;
pub mod hipo_source;
pub mod inference;
pub mod io;
pub mod scorer;
pub mod synth;
pub mod pipeline;
