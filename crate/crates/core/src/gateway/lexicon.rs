use serde::{Deserialize, Serialize};

use crate::assessment::{ScaleElement, MAX_TOTAL};

/// A factor tag recognised by the mock backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub element: String,
    pub tag: String,
    pub weight: u8,
}

/// Keyword lexicon for the mock backend, one tag per scale element with the
/// element's maximum score as weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLexicon {
    entries: Vec<LexiconEntry>,
}

impl Default for RiskLexicon {
    fn default() -> Self {
        Self {
            entries: ScaleElement::ALL
                .into_iter()
                .map(|e| LexiconEntry {
                    element: e.display_name().to_string(),
                    tag: Self::tag_for(e),
                    weight: e.max_score(),
                })
                .collect(),
        }
    }
}

impl RiskLexicon {
    /// Returns `None` for an empty entry list or an empty tag.
    pub fn new(entries: Vec<LexiconEntry>) -> Option<Self> {
        if entries.is_empty() || entries.iter().any(|e| e.tag.is_empty()) {
            return None;
        }
        Some(Self { entries })
    }

    /// Tag text for a scale element, e.g. `#hopelessness`.
    pub fn tag_for(element: ScaleElement) -> String {
        format!("#{}", element.key())
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Entries whose tag occurs in `text`, in lexicon order.
    pub fn matches<'a>(&'a self, text: &str) -> Vec<&'a LexiconEntry> {
        self.entries.iter().filter(|e| text.contains(&e.tag)).collect()
    }

    /// Sum of matched weights, capped at the scale maximum.
    pub fn score(&self, text: &str) -> u8 {
        let sum: u32 = self.matches(text).iter().map(|e| u32::from(e.weight)).sum();
        sum.min(u32::from(MAX_TOTAL)) as u8
    }
}
