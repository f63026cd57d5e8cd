use crate::domain::RiskLabel;
use crate::predictor::PredictionPayload;
use crate::prompts::{INPUT_MARKER, TAG_CONDENSE, TAG_IMPORTANCE, TAG_PREDICT, TAG_SUMMARIZE};

use super::{truncate_output, BackendReply, ChatBackend, ChatRequest, ChatResponse, GatewayError, RiskLexicon};

/// Characters of input copied into mock summaries.
pub const DEFAULT_EXCERPT_CHARS: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptShape {
    Summarize,
    Condense,
    Importance,
    Predict,
}

impl PromptShape {
    pub fn detect(system_prompt: &str) -> Option<Self> {
        [
            (TAG_SUMMARIZE, PromptShape::Summarize),
            (TAG_CONDENSE, PromptShape::Condense),
            (TAG_IMPORTANCE, PromptShape::Importance),
            (TAG_PREDICT, PromptShape::Predict),
        ]
        .into_iter()
        .find(|(tag, _)| system_prompt.contains(tag))
        .map(|(_, shape)| shape)
    }
}

/// Case material of a prompt: everything after the last input marker.
fn focus(user_prompt: &str) -> &str {
    match user_prompt.rfind(INPUT_MARKER) {
        Some(at) => &user_prompt[at + INPUT_MARKER.len()..],
        None => user_prompt,
    }
}

/// Body of the last `###` section, whitespace collapsed.
fn excerpt(focus: &str, n: usize) -> String {
    let body = match focus.rfind("### ") {
        Some(at) => focus[at..].split_once('\n').map_or("", |(_, rest)| rest),
        None => focus,
    };
    body.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .take(n)
        .collect()
}

/// Deterministic lexicon-driven completion.
///
/// Summaries list the factor tags found in the case material followed by an
/// excerpt of the input. Importance is the matched weight sum clamped to
/// `[1, 10]`. Predictions score the capped weight sum.
pub fn mock_complete(req: &ChatRequest, lexicon: &RiskLexicon) -> Result<ChatResponse, GatewayError> {
    mock_complete_with(req, lexicon, DEFAULT_EXCERPT_CHARS)
}

fn mock_complete_with(
    req: &ChatRequest,
    lexicon: &RiskLexicon,
    excerpt_chars: usize,
) -> Result<ChatResponse, GatewayError> {
    let shape = PromptShape::detect(&req.system_prompt).ok_or(GatewayError::UnknownPromptShape)?;
    let material = focus(&req.user_prompt);
    let matched = lexicon.matches(material);

    let text = match shape {
        PromptShape::Summarize | PromptShape::Condense => {
            let tags = if matched.is_empty() {
                "none".to_string()
            } else {
                matched.iter().map(|e| e.tag.as_str()).collect::<Vec<_>>().join(" ")
            };
            format!("factors: {tags}\n{}", excerpt(material, excerpt_chars))
        }
        PromptShape::Importance => {
            let sum: u32 = matched.iter().map(|e| u32::from(e.weight)).sum();
            sum.clamp(1, 10).to_string()
        }
        PromptShape::Predict => {
            let score = lexicon.score(material);
            let key_factors: Vec<String> = matched.iter().map(|e| e.element.clone()).collect();
            let rationale = if key_factors.is_empty() {
                "No risk factors were identified in the summaries.".to_string()
            } else {
                format!("Identified factors: {}.", key_factors.join("; "))
            };
            let payload = PredictionPayload {
                risk_score: i64::from(score),
                risk_label: Some(RiskLabel::from_score(score).as_str().to_string()),
                key_factors,
                rationale,
            };
            serde_json::to_string(&payload).expect("payload serializes")
        }
    };

    Ok(ChatResponse {
        text: truncate_output(&text, req.max_output_chars),
        backend_id: MockBackend::ID.to_string(),
        latency_ms: 0,
        attempt_count: 1,
    })
}

/// [`ChatBackend`] over [`mock_complete`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    lexicon: RiskLexicon,
    excerpt_chars: usize,
}

impl MockBackend {
    pub const ID: &'static str = "mock";

    pub fn new(lexicon: RiskLexicon) -> Self {
        Self {
            lexicon,
            excerpt_chars: DEFAULT_EXCERPT_CHARS,
        }
    }

    pub fn with_excerpt_chars(mut self, n: usize) -> Self {
        self.excerpt_chars = n;
        self
    }

    pub fn lexicon(&self) -> &RiskLexicon {
        &self.lexicon
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let resp = mock_complete_with(req, &self.lexicon, self.excerpt_chars)?;
        Ok(BackendReply {
            text: resp.text,
            attempt_count: resp.attempt_count,
        })
    }
}
