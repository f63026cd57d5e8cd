//! Suicide-risk assessment for long support-hotline call transcripts.
//!
//! Transcripts are split into character-budgeted segments, summarized into a
//! memory stream through a chat-completion backend, scored 0-16 by a
//! zero-shot or few-shot prompt, fused with the 12-element manual scale and
//! evaluated against follow-up outcomes with bootstrap confidence intervals.

pub mod assessment;
pub mod chunker;
pub mod domain;
pub mod evaluation;
pub mod gateway;
pub mod memory;
pub mod pipeline;
pub mod predictor;
pub mod prompts;
