//! Memory-stream summarization of a segmented transcript.
//!
//! Each segment is summarized with context retrieved from the summaries of
//! earlier segments. Retrieval ranks memories by a weighted sum of recency
//! (exponential decay since last access), importance (model-assigned, 1-10)
//! and relevance (character-bigram cosine similarity to the current segment).
//! The previous segment's summary is always part of the context. A final call
//! condenses all summaries into one record of the caller.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{segment_transcript, ChunkConfig, ChunkError};
use crate::domain::{CaseSummaryStream, SegmentSummary, TranscriptDocument, TranscriptSegment};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts::PromptSet;

pub const DEFAULT_SUMMARY_BUDGET: usize = 512;
/// Used when the importance reply holds no integer.
pub const FALLBACK_IMPORTANCE: u8 = 5;
const IMPORTANCE_REPLY_CHARS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryWeights {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
}

impl Default for MemoryWeights {
    fn default() -> Self {
        Self {
            recency: 1.0 / 3.0,
            importance: 1.0 / 3.0,
            relevance: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub top_k: usize,
    pub weights: MemoryWeights,
    pub recency_decay: f64,
    pub summary_budget_chars: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            top_k: 4,
            weights: MemoryWeights::default(),
            recency_decay: 0.95,
            summary_budget_chars: DEFAULT_SUMMARY_BUDGET,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let w = self.weights;
        if [w.recency, w.importance, w.relevance]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(MemoryError::InvalidConfig("memory weights must be non-negative".into()));
        }
        if (w.recency + w.importance + w.relevance - 1.0).abs() > 1e-9 {
            return Err(MemoryError::InvalidConfig(format!(
                "memory weights sum to {}, expected 1",
                w.recency + w.importance + w.relevance
            )));
        }
        if !(self.recency_decay > 0.0 && self.recency_decay < 1.0) {
            return Err(MemoryError::InvalidConfig(format!(
                "recency_decay {} outside (0, 1)",
                self.recency_decay
            )));
        }
        if self.top_k == 0 {
            return Err(MemoryError::InvalidConfig("top_k must be positive".into()));
        }
        if self.summary_budget_chars == 0 {
            return Err(MemoryError::InvalidConfig(
                "summary_budget_chars must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("segment {segment_index}: {source}")]
    Segment {
        segment_index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("final condensation: {0}")]
    Condense(#[source] GatewayError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error("invalid memory config: {0}")]
    InvalidConfig(String),
}

impl MemoryError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            MemoryError::Segment { source, .. } | MemoryError::Condense(source) => Some(source),
            _ => None,
        }
    }
}

/// A summary paired with its score for the current retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub summary: SegmentSummary,
    pub retrieval_score: f64,
}

fn bigrams(text: &str) -> HashMap<(char, char), f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = HashMap::new();
    for pair in chars.windows(2) {
        *counts.entry((pair[0], pair[1])).or_insert(0.0) += 1.0;
    }
    counts
}

/// Cosine similarity of character-bigram frequency vectors, in `[0, 1]`.
/// Texts shorter than two characters have no bigrams and score 0.
pub fn bigram_cosine(a: &str, b: &str) -> f64 {
    let (va, vb) = (bigrams(a), bigrams(b));
    if va.is_empty() || vb.is_empty() {
        return 0.0;
    }
    let dot: f64 = va.iter().filter_map(|(k, x)| vb.get(k).map(|y| x * y)).sum();
    let norm = |v: &HashMap<(char, char), f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (norm(&va) * norm(&vb))).clamp(0.0, 1.0)
}

fn combine(cfg: &MemoryConfig, recency: f64, importance_norm: f64, relevance: f64) -> f64 {
    let w = cfg.weights;
    (w.recency * recency + w.importance * importance_norm + w.relevance * relevance).clamp(0.0, 1.0)
}

/// Retrieval score of a memory for the segment at `current_index`.
pub fn score_memory(
    entry: &SegmentSummary,
    current_index: usize,
    current_segment_text: &str,
    cfg: &MemoryConfig,
) -> f64 {
    let gap = current_index.saturating_sub(entry.last_access);
    let recency = cfg.recency_decay.powi(gap.min(i32::MAX as usize) as i32);
    let importance = f64::from(entry.importance.clamp(1, 10)) / 10.0;
    let relevance = bigram_cosine(&entry.text, current_segment_text);
    combine(cfg, recency, importance, relevance)
}

/// Ranks `(score, created_at)` pairs: score descending, then earlier creation.
/// Returns positions into the input, at most `k` of them.
pub(crate) fn rank_top_k(scored: &[(f64, usize)], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .0
            .total_cmp(&scored[a].0)
            .then(scored[a].1.cmp(&scored[b].1))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Scored top-k memories for the current segment. Entries returned are
/// marked as accessed at `current_index` in the stream as well.
pub fn retrieve_memories(
    stream: &mut CaseSummaryStream,
    current_index: usize,
    current_segment_text: &str,
    cfg: &MemoryConfig,
) -> Vec<MemoryEntry> {
    let scored: Vec<(f64, usize)> = stream
        .entries
        .iter()
        .map(|e| (score_memory(e, current_index, current_segment_text, cfg), e.created_at))
        .collect();
    rank_top_k(&scored, cfg.top_k)
        .into_iter()
        .map(|pos| {
            let entry = &mut stream.entries[pos];
            entry.last_access = entry.last_access.max(current_index);
            MemoryEntry {
                summary: entry.clone(),
                retrieval_score: scored[pos].0,
            }
        })
        .collect()
}

/// The summarization request for one segment.
pub fn build_summarize_request(
    segment: &TranscriptSegment,
    retrieved: &[SegmentSummary],
    previous: Option<&SegmentSummary>,
    cfg: &MemoryConfig,
    prompts: &PromptSet,
) -> ChatRequest {
    let memory_block = if retrieved.is_empty() {
        String::new()
    } else {
        let lines: String = retrieved
            .iter()
            .map(|m| format!("- (part {}) {}\n", m.segment_index + 1, m.text))
            .collect();
        format!("### Earlier notes, most relevant first\n{lines}\n")
    };
    let previous_block = previous
        .map(|p| format!("### Notes on the previous part\n{}\n\n", p.text))
        .unwrap_or_default();
    let budget = cfg.summary_budget_chars.to_string();
    let (system, user) = prompts.summarize.render(&[
        ("memory_block", &memory_block),
        ("previous_block", &previous_block),
        ("segment", &segment.text),
        ("budget", &budget),
    ]);
    ChatRequest::new(system, user, cfg.summary_budget_chars)
}

/// First integer in `reply`, clamped to `[1, 10]`.
pub fn parse_importance(reply: &str) -> Option<u8> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..]
        .chars()
        .take_while(char::is_ascii_digit)
        .take(3)
        .collect();
    let value: u32 = digits.parse().ok()?;
    Some(value.clamp(1, 10) as u8)
}

/// Summarizes one segment and rates its importance. The segment text is
/// redacted before it is sent.
pub fn summarize_segment(
    segment: &TranscriptSegment,
    retrieved: &[SegmentSummary],
    previous: Option<&SegmentSummary>,
    gateway: &Gateway,
    cfg: &MemoryConfig,
    prompts: &PromptSet,
) -> Result<SegmentSummary, MemoryError> {
    let at_segment = |source| MemoryError::Segment {
        segment_index: segment.index,
        source,
    };
    let redacted = TranscriptSegment::new(segment.index, gateway.redact(&segment.text).redacted_text);
    let req = build_summarize_request(&redacted, retrieved, previous, cfg, prompts);
    let summary = gateway.complete(&req).map_err(at_segment)?.text;

    let (system, user) = prompts.importance.render(&[("summary", &summary)]);
    let rating = gateway
        .complete(&ChatRequest::new(system, user, IMPORTANCE_REPLY_CHARS))
        .map_err(at_segment)?;
    let importance = parse_importance(&rating.text).unwrap_or_else(|| {
        log::warn!(
            "segment {}: no importance rating in reply {:?}",
            segment.index,
            rating.text
        );
        FALLBACK_IMPORTANCE
    });

    Ok(SegmentSummary {
        segment_index: segment.index,
        text: summary,
        importance,
        created_at: segment.index,
        last_access: segment.index,
    })
}

pub fn build_condense_request(entries: &[SegmentSummary], cfg: &MemoryConfig, prompts: &PromptSet) -> ChatRequest {
    let summaries = entries
        .iter()
        .map(|e| format!("[part {}] {}", e.segment_index + 1, e.text))
        .collect::<Vec<_>>()
        .join("\n");
    let budget = cfg.summary_budget_chars.to_string();
    let (system, user) = prompts
        .condense
        .render(&[("summaries", &summaries), ("budget", &budget)]);
    ChatRequest::new(system, user, cfg.summary_budget_chars)
}

/// Segments a transcript and builds its full summary stream. Segments are
/// processed strictly in order; the first error aborts the case.
pub fn summarize_case(
    doc: &TranscriptDocument,
    gateway: &Gateway,
    chunk_cfg: &ChunkConfig,
    mem_cfg: &MemoryConfig,
    prompts: &PromptSet,
) -> Result<CaseSummaryStream, MemoryError> {
    mem_cfg.validate()?;
    let segments = segment_transcript(doc, chunk_cfg)?;
    let mut stream = CaseSummaryStream::default();

    for segment in &segments {
        debug_assert_eq!(stream.entries.len(), segment.index);
        let retrieved: Vec<SegmentSummary> = retrieve_memories(&mut stream, segment.index, &segment.text, mem_cfg)
            .into_iter()
            .map(|m| m.summary)
            .collect();
        let previous = stream.entries.last();
        let summary = summarize_segment(segment, &retrieved, previous, gateway, mem_cfg, prompts)?;
        stream.entries.push(summary);
    }

    let req = build_condense_request(&stream.entries, mem_cfg, prompts);
    let final_summary = gateway.complete(&req).map_err(MemoryError::Condense)?.text;
    stream.final_summary = Some(final_summary);
    Ok(stream)
}
