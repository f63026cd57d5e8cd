//! Character-budget segmentation of transcripts.
//!
//! Whole utterances are packed greedily into segments. An utterance that is
//! longer than the budget on its own is cut at exact budget-sized character
//! boundaries. Concatenating the segments always reproduces the canonical
//! text, separators included.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{char_len, Speaker, TranscriptDocument, TranscriptSegment, UTTERANCE_SEPARATOR};

pub const DEFAULT_SEGMENT_BUDGET: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub segment_budget_chars: usize,
    /// When false only caller (and unattributed) speech is kept.
    pub include_operator_utterances: bool,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            segment_budget_chars: DEFAULT_SEGMENT_BUDGET,
            include_operator_utterances: true,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("transcript is empty after speaker filtering")]
    EmptyTranscript,
    #[error("segment budget must be at least 1 character")]
    InvalidBudget,
}

/// The text that segmentation covers: utterances kept by the speaker filter,
/// joined with the utterance separator.
pub fn canonical_text(doc: &TranscriptDocument, cfg: &ChunkConfig) -> String {
    if cfg.include_operator_utterances {
        return doc.text.clone();
    }
    crate::domain::join_utterances(doc.utterances.iter().filter(|u| u.speaker != Speaker::Operator))
}

/// Splits a transcript into ordered segments no longer than the budget.
pub fn segment_transcript(doc: &TranscriptDocument, cfg: &ChunkConfig) -> Result<Vec<TranscriptSegment>, ChunkError> {
    let budget = cfg.segment_budget_chars;
    if budget == 0 {
        return Err(ChunkError::InvalidBudget);
    }

    let kept: Vec<&str> = doc
        .utterances
        .iter()
        .filter(|u| cfg.include_operator_utterances || u.speaker != Speaker::Operator)
        .map(|u| u.text.as_str())
        .collect();

    // Each packing unit is an utterance plus its trailing separator.
    let units: Vec<String> = kept
        .iter()
        .enumerate()
        .map(|(i, text)| {
            if i + 1 < kept.len() {
                format!("{text}{UTTERANCE_SEPARATOR}")
            } else {
                (*text).to_string()
            }
        })
        .collect();

    let mut packer = Packer::new(budget);
    for unit in &units {
        packer.push(unit);
    }
    let segments = packer.finish();
    if segments.is_empty() {
        return Err(ChunkError::EmptyTranscript);
    }
    Ok(segments)
}

struct Packer {
    budget: usize,
    current: String,
    current_len: usize,
    done: Vec<TranscriptSegment>,
}

impl Packer {
    fn new(budget: usize) -> Self {
        Self {
            budget,
            current: String::new(),
            current_len: 0,
            done: Vec::new(),
        }
    }

    fn push(&mut self, unit: &str) {
        let len = char_len(unit);
        if len == 0 {
            return;
        }
        if self.current_len + len <= self.budget {
            self.current.push_str(unit);
            self.current_len += len;
            return;
        }
        self.flush();
        if len <= self.budget {
            self.current.push_str(unit);
            self.current_len = len;
            return;
        }

        let mut piece = String::new();
        let mut piece_len = 0;
        for c in unit.chars() {
            piece.push(c);
            piece_len += 1;
            if piece_len == self.budget {
                self.emit(std::mem::take(&mut piece));
                piece_len = 0;
            }
        }
        // The tail of a hard-split utterance stays open for the next units.
        self.current = piece;
        self.current_len = piece_len;
    }

    fn flush(&mut self) {
        if self.current_len > 0 {
            let text = std::mem::take(&mut self.current);
            self.current_len = 0;
            self.emit(text);
        }
    }

    fn emit(&mut self, text: String) {
        let index = self.done.len();
        self.done.push(TranscriptSegment::new(index, text));
    }

    fn finish(mut self) -> Vec<TranscriptSegment> {
        self.flush();
        self.done
    }
}
