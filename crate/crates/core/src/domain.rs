//! Core data model shared by every stage: cases, transcripts, segments,
//! summaries, outcomes and risk labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assessment::ManualScaleRecord;

/// Separator placed between utterances in the canonical transcript text.
pub const UTTERANCE_SEPARATOR: &str = "\n";

/// Character length in Unicode scalar values. Budgets are expressed in
/// characters, so one CJK character counts as 1.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Operator,
    Caller,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
        }
    }
}

/// Full transcribed dialogue of one call.
///
/// `text` is always the utterance texts joined by [`UTTERANCE_SEPARATOR`].
/// Use [`TranscriptDocument::from_utterances`] to keep that true; the raw
/// constructor exists for loading and validating external data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptDocument {
    pub text: String,
    pub utterances: Vec<Utterance>,
}

impl TranscriptDocument {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Self {
        let text = join_utterances(utterances.iter());
        Self { text, utterances }
    }

    /// A transcript without diarization: one utterance of unknown speaker.
    pub fn from_text(text: impl Into<String>) -> Self {
        Self::from_utterances(vec![Utterance::new(Speaker::Unknown, text)])
    }

    pub fn is_consistent(&self) -> bool {
        join_utterances(self.utterances.iter()) == self.text
    }
}

pub(crate) fn join_utterances<'a>(utterances: impl Iterator<Item = &'a Utterance>) -> String {
    let mut out = String::new();
    for (i, u) in utterances.enumerate() {
        if i > 0 {
            out.push_str(UTTERANCE_SEPARATOR);
        }
        out.push_str(&u.text);
    }
    out
}

/// One chunk of a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub index: usize,
    pub text: String,
    pub char_count: usize,
}

impl TranscriptSegment {
    pub fn new(index: usize, text: String) -> Self {
        let char_count = char_len(&text);
        Self {
            index,
            text,
            char_count,
        }
    }
}

/// Summary of one segment plus its memory-stream bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segment_index: usize,
    pub text: String,
    /// Salience in `[1, 10]`.
    pub importance: u8,
    pub created_at: usize,
    pub last_access: usize,
}

/// The ordered per-segment summaries of one case and the condensed
/// whole-case summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummaryStream {
    pub entries: Vec<SegmentSummary>,
    pub final_summary: Option<String>,
}

impl CaseSummaryStream {
    pub fn is_complete(&self) -> bool {
        self.final_summary.is_some() && self.entries.iter().enumerate().all(|(i, e)| e.segment_index == i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowUpStatus {
    Confirmed,
    Lost,
}

/// Ground truth from the follow-up calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpOutcome {
    pub attempted_suicide: bool,
    pub status: FollowUpStatus,
    /// Number of follow-up calls reached, out of four.
    pub schedule_points_reached: u8,
}

impl FollowUpOutcome {
    pub fn confirmed(attempted_suicide: bool) -> Self {
        Self {
            attempted_suicide,
            status: FollowUpStatus::Confirmed,
            schedule_points_reached: 4,
        }
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == FollowUpStatus::Confirmed
    }
}

/// Binary risk class; totals of 8 and above are high risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiskLabel {
    #[serde(rename = "high")]
    HighRisk,
    #[serde(rename = "low-moderate")]
    LowModerate,
}

impl RiskLabel {
    /// Cut point on the shared 0-16 range.
    pub const HIGH_RISK_THRESHOLD: u8 = 8;

    pub fn from_score(score: u8) -> Self {
        if score >= Self::HIGH_RISK_THRESHOLD {
            RiskLabel::HighRisk
        } else {
            RiskLabel::LowModerate
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskLabel::HighRisk => "high",
            RiskLabel::LowModerate => "low-moderate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "high" | "high-risk" => Some(RiskLabel::HighRisk),
            "low-moderate" | "low-moderate-risk" | "low" | "moderate" => Some(RiskLabel::LowModerate),
            _ => None,
        }
    }

    pub fn is_high(&self) -> bool {
        matches!(self, RiskLabel::HighRisk)
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One hotline call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub case_id: String,
    pub transcript: TranscriptDocument,
    pub scale: Option<ManualScaleRecord>,
    pub outcome: Option<FollowUpOutcome>,
    /// Free-form metadata; never read by prediction logic.
    pub meta: BTreeMap<String, String>,
}

/// A violated invariant on a [`CaseRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub field: String,
    pub rule: String,
}

impl Finding {
    fn new(field: &str, rule: &str) -> Self {
        Self {
            field: field.to_string(),
            rule: rule.to_string(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.rule)
    }
}

/// Checks a case against the type invariants. An empty list means valid.
/// An absent outcome is fine here; evaluation filters such cases itself.
pub fn validate_case(case: &CaseRecord) -> Vec<Finding> {
    let mut findings = Vec::new();
    if case.case_id.trim().is_empty() {
        findings.push(Finding::new("case_id", "empty"));
    }
    if case.transcript.text.is_empty() {
        findings.push(Finding::new("transcript.text", "empty"));
    }
    if !case.transcript.is_consistent() {
        findings.push(Finding::new("utterance/text", "mismatch"));
    }
    if let Some(scale) = &case.scale {
        for (element, value) in scale.invalid_answers() {
            findings.push(Finding {
                field: format!("scale.answers.{}", element.key()),
                rule: format!("value {value} not permitted"),
            });
        }
    }
    if let Some(outcome) = &case.outcome {
        if outcome.schedule_points_reached > 4 {
            findings.push(Finding::new("outcome.schedule_points_reached", "out of range [0,4]"));
        }
    }
    findings
}

/// Returns the case ids that occur more than once, in first-seen order.
pub fn duplicate_case_ids(cases: &[CaseRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    let mut dups = Vec::new();
    for case in cases {
        if !seen.insert(case.case_id.as_str()) && reported.insert(case.case_id.as_str()) {
            dups.push(case.case_id.clone());
        }
    }
    dups
}
