//! Risk prediction from a case summary stream.
//!
//! Prompts ask for one JSON object with `risk_score` (0-16, same range as the
//! manual scale), `risk_label`, `key_factors` and `rationale`. Parsing is
//! tolerant of surrounding prose and code fences; the numeric score is
//! authoritative and the label is recomputed from it when they disagree.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assessment::{ScaleElement, MAX_TOTAL};
use crate::domain::{CaseSummaryStream, RiskLabel};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts::PromptSet;

const DEFAULT_EXEMPLARS: &str = include_str!("../data/exemplars.jsonl");

const FORMAT_REMINDER: &str = "\n\nReminder: reply with exactly one JSON object with the fields \
risk_score, risk_label, key_factors and rationale, and nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionMode {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "few-shot")]
    FewShot,
}

impl PredictionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionMode::ZeroShot => "zero-shot",
            PredictionMode::FewShot => "few-shot",
        }
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PredictionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot" => Ok(PredictionMode::ZeroShot),
            "few-shot" => Ok(PredictionMode::FewShot),
            other => Err(format!("unknown prediction mode `{other}`")),
        }
    }
}

/// Wire shape of the structured model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionPayload {
    pub risk_score: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_label: Option<String>,
    #[serde(default)]
    pub key_factors: Vec<String>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskPrediction {
    pub score: u8,
    pub label: RiskLabel,
    pub key_factors: Vec<String>,
    pub rationale: String,
    pub mode: PredictionMode,
    /// Audit copy of the model reply the prediction was parsed from.
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RiskPrediction {
    pub fn from_score(score: u8, key_factors: Vec<String>, rationale: String, mode: PredictionMode) -> Self {
        Self {
            score,
            label: RiskLabel::from_score(score),
            key_factors,
            rationale,
            mode,
            raw_response: String::new(),
            warnings: Vec::new(),
        }
    }

    /// Label agrees with score and high-risk predictions name their factors.
    pub fn is_consistent(&self) -> bool {
        self.score <= MAX_TOTAL
            && self.label == RiskLabel::from_score(self.score)
            && (!self.label.is_high() || !self.key_factors.is_empty())
    }

    pub fn payload(&self) -> PredictionPayload {
        PredictionPayload {
            risk_score: i64::from(self.score),
            risk_label: Some(self.label.as_str().to_string()),
            key_factors: self.key_factors.clone(),
            rationale: self.rationale.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredictError {
    #[error("summary stream has no final summary")]
    MissingSummary,
    #[error("bad exemplar set: {0}")]
    BadExemplarSet(String),
    #[error("no usable structured object in model response after {attempts} attempt(s): {detail}")]
    UnparseableResponse {
        detail: String,
        attempts: u32,
        last_response: String,
    },
    #[error("risk score {0} outside 0-16")]
    ScoreOutOfRange(i64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn unparseable(detail: impl Into<String>, response: &str) -> PredictError {
    PredictError::UnparseableResponse {
        detail: detail.into(),
        attempts: 1,
        last_response: response.to_string(),
    }
}

/// First JSON object in `text` that carries a `risk_score` field.
fn find_prediction_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(at, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[at..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) if map.contains_key("risk_score") => Some(map),
            _ => None,
        }
    })
}

fn integral(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n.as_i64().or_else(|| {
            n.as_f64()
                .filter(|f| f.fract() == 0.0 && f.abs() < 1e15)
                .map(|f| f as i64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Extracts and validates a prediction from a model reply.
pub fn parse_prediction(response_text: &str, mode: PredictionMode) -> Result<RiskPrediction, PredictError> {
    let obj = find_prediction_object(response_text)
        .ok_or_else(|| unparseable("no JSON object with risk_score", response_text))?;

    let raw_score = obj
        .get("risk_score")
        .and_then(integral)
        .ok_or_else(|| unparseable("risk_score is not an integer", response_text))?;
    if !(0..=i64::from(MAX_TOTAL)).contains(&raw_score) {
        return Err(PredictError::ScoreOutOfRange(raw_score));
    }
    let score = raw_score as u8;
    let label = RiskLabel::from_score(score);

    let mut warnings = Vec::new();
    match obj.get("risk_label").and_then(Value::as_str) {
        Some(s) => match RiskLabel::parse(s) {
            Some(given) if given == label => {}
            Some(given) => warnings.push(format!(
                "risk_label `{given}` disagrees with risk_score {score}; using `{label}`"
            )),
            None => warnings.push(format!("unrecognised risk_label `{s}`; using `{label}`")),
        },
        None => warnings.push(format!("risk_label missing; using `{label}`")),
    }

    let key_factors: Vec<String> = match obj.get("key_factors") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.trim().to_string(),
                other => other.to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    };
    if label.is_high() && key_factors.is_empty() {
        return Err(unparseable("high-risk prediction names no key factors", response_text));
    }

    let rationale = match obj.get("rationale") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RiskPrediction {
        score,
        label,
        key_factors,
        rationale,
        mode,
        raw_response: response_text.to_string(),
        warnings,
    })
}

/// Canonical JSON rendering of a prediction's payload.
pub fn render_prediction(pred: &RiskPrediction) -> String {
    serde_json::to_string(&pred.payload()).expect("payload serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarOutcome {
    Positive,
    Negative,
}

/// A past case with known follow-up outcome, shown to the model as a worked example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exemplar {
    pub summary: String,
    pub outcome: ExemplarOutcome,
    pub score: u8,
    #[serde(default)]
    pub key_factors: Vec<String>,
}

impl Exemplar {
    fn as_prediction(&self) -> RiskPrediction {
        let rationale = match self.outcome {
            ExemplarOutcome::Positive => "Follow-up confirmed a suicide attempt.",
            ExemplarOutcome::Negative => "Follow-up confirmed no suicide attempt.",
        };
        RiskPrediction::from_score(
            self.score,
            self.key_factors.clone(),
            rationale.to_string(),
            PredictionMode::FewShot,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSet {
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn parse_jsonl(text: &str) -> Result<Self, PredictError> {
        let exemplars = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<Exemplar>(l)
                    .map_err(|e| PredictError::BadExemplarSet(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exemplars })
    }

    pub fn load(path: &Path) -> Result<Self, PredictError> {
        let text =
            fs::read_to_string(path).map_err(|e| PredictError::BadExemplarSet(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }

    /// The six built-in exemplars, three per outcome.
    pub fn builtin() -> Self {
        Self::parse_jsonl(DEFAULT_EXEMPLARS).expect("built-in exemplars parse")
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self
            .exemplars
            .iter()
            .filter(|e| e.outcome == ExemplarOutcome::Positive)
            .count();
        (pos, self.exemplars.len() - pos)
    }

    /// Checks the set against `per_class` (exact count per outcome when set).
    pub fn validate(&self, per_class: Option<usize>) -> Result<(), PredictError> {
        let (pos, neg) = self.counts();
        if self.exemplars.is_empty() {
            return Err(PredictError::BadExemplarSet("no exemplars".into()));
        }
        if let Some(n) = per_class {
            if pos != n || neg != n {
                return Err(PredictError::BadExemplarSet(format!(
                    "expected {n} positive and {n} negative exemplars, found {pos} and {neg}"
                )));
            }
        }
        for (i, e) in self.exemplars.iter().enumerate() {
            if e.score > MAX_TOTAL {
                return Err(PredictError::BadExemplarSet(format!(
                    "exemplar {} score {} outside 0-16",
                    i + 1,
                    e.score
                )));
            }
            if RiskLabel::from_score(e.score).is_high() && e.key_factors.is_empty() {
                return Err(PredictError::BadExemplarSet(format!(
                    "exemplar {} is high risk but lists no key factors",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Exemplars interleaved positive, negative, positive, ... with any
    /// surplus of one class appended in file order.
    pub fn alternating(&self) -> Vec<&Exemplar> {
        let (pos, neg): (Vec<&Exemplar>, Vec<&Exemplar>) = self
            .exemplars
            .iter()
            .partition(|e| e.outcome == ExemplarOutcome::Positive);
        let mut out = Vec::with_capacity(self.exemplars.len());
        let (mut p, mut n) = (pos.into_iter(), neg.into_iter());
        loop {
            match (p.next(), n.next()) {
                (None, None) => break,
                (a, b) => out.extend(a.into_iter().chain(b)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub mode: PredictionMode,
    /// Send the per-segment summaries along with the final summary.
    pub include_entry_summaries: bool,
    /// Required exemplars per outcome class; `None` accepts any non-empty set.
    pub exemplars_per_class: Option<usize>,
    pub max_output_chars: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            mode: PredictionMode::FewShot,
            include_entry_summaries: true,
            exemplars_per_class: Some(3),
            max_output_chars: 2048,
        }
    }
}

fn factor_vocabulary() -> String {
    ScaleElement::ALL
        .iter()
        .map(|e| format!("- {} [{}]", e.display_name(), e.max_score()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn case_block(stream: &CaseSummaryStream, cfg: &PredictorConfig) -> Result<String, PredictError> {
    let final_summary = stream.final_summary.as_deref().ok_or(PredictError::MissingSummary)?;
    let mut block = format!("### Comprehensive summary\n{final_summary}\n");
    if cfg.include_entry_summaries && !stream.entries.is_empty() {
        block.push_str("\n### Summaries of each part of the call\n");
        for e in &stream.entries {
            block.push_str(&format!("[part {}] {}\n", e.segment_index + 1, e.text));
        }
    }
    Ok(block)
}

pub fn build_zero_shot_prompt(
    stream: &CaseSummaryStream,
    cfg: &PredictorConfig,
    prompts: &PromptSet,
) -> Result<ChatRequest, PredictError> {
    let case = case_block(stream, cfg)?;
    let (system, user) = prompts
        .zero_shot
        .render(&[("factors", &factor_vocabulary()), ("case", &case)]);
    Ok(ChatRequest::new(system, user, cfg.max_output_chars))
}

/// One rendered exemplar block; the `Assessment:` line holds the structured output.
pub fn render_exemplar(number: usize, exemplar: &Exemplar) -> String {
    let outcome = match exemplar.outcome {
        ExemplarOutcome::Positive => "attempted suicide",
        ExemplarOutcome::Negative => "no suicide attempt",
    };
    format!(
        "### Example {number}\nSummary: {}\nFollow-up outcome: {outcome}\nAssessment: {}\n",
        exemplar.summary,
        render_prediction(&exemplar.as_prediction())
    )
}

pub fn build_few_shot_prompt(
    stream: &CaseSummaryStream,
    exemplars: &ExemplarSet,
    cfg: &PredictorConfig,
    prompts: &PromptSet,
) -> Result<ChatRequest, PredictError> {
    exemplars.validate(cfg.exemplars_per_class)?;
    let case = case_block(stream, cfg)?;
    let blocks = exemplars
        .alternating()
        .into_iter()
        .enumerate()
        .map(|(i, e)| render_exemplar(i + 1, e))
        .collect::<Vec<_>>()
        .join("\n");
    let (system, user) = prompts.few_shot.render(&[
        ("factors", &factor_vocabulary()),
        ("exemplars", &blocks),
        ("case", &case),
    ]);
    Ok(ChatRequest::new(system, user, cfg.max_output_chars))
}

/// Copy of the stream with every summary passed through the gateway's redactor.
pub fn redact_stream(stream: &CaseSummaryStream, gateway: &Gateway) -> CaseSummaryStream {
    let mut out = stream.clone();
    for e in &mut out.entries {
        e.text = gateway.redact(&e.text).redacted_text;
    }
    out.final_summary = out.final_summary.map(|s| gateway.redact(&s).redacted_text);
    out
}

/// Redacts, prompts, calls the model and parses its reply. An unparseable
/// reply is retried once with a format reminder appended.
pub fn predict_case(
    stream: &CaseSummaryStream,
    gateway: &Gateway,
    cfg: &PredictorConfig,
    exemplars: Option<&ExemplarSet>,
    prompts: &PromptSet,
) -> Result<RiskPrediction, PredictError> {
    let redacted = redact_stream(stream, gateway);
    let mut req = match cfg.mode {
        PredictionMode::ZeroShot => build_zero_shot_prompt(&redacted, cfg, prompts)?,
        PredictionMode::FewShot => {
            let set = exemplars.ok_or_else(|| PredictError::BadExemplarSet("few-shot mode needs exemplars".into()))?;
            build_few_shot_prompt(&redacted, set, cfg, prompts)?
        }
    };

    let first = gateway.complete(&req)?;
    match parse_prediction(&first.text, cfg.mode) {
        Err(PredictError::UnparseableResponse { detail, .. }) => {
            log::warn!("unparseable prediction ({detail}); retrying with format reminder");
            req.user_prompt.push_str(FORMAT_REMINDER);
            let second = gateway.complete(&req)?;
            parse_prediction(&second.text, cfg.mode).map_err(|e| match e {
                PredictError::UnparseableResponse {
                    detail, last_response, ..
                } => PredictError::UnparseableResponse {
                    detail,
                    attempts: 2,
                    last_response,
                },
                other => other,
            })
        }
        other => other,
    }
}
