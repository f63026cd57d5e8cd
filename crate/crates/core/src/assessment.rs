//! The 12-element manual suicide risk scale and its fusion with the model score.
//!
//! Element scores sum to a 0-16 total. Totals of 8 and above are high risk.
//! A record with more than five unanswered elements has no total.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::RiskLabel;
use crate::predictor::RiskPrediction;

/// Maximum number of unanswered elements that still yields a total.
pub const MAX_UNANSWERED: usize = 5;
pub const MAX_TOTAL: u8 = 16;

/// The rows of the scale, in instrument order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScaleElement {
    SuicidalIdeationAndPlan,
    SevereDepression,
    Hopelessness,
    PsychologicalDistress,
    AcuteLifeEvents,
    ChronicLifeEvents,
    AlcoholOrSubstanceMisuse,
    SeverePhysicalIllness,
    FearOfBeingAttacked,
    HistoryOfBeingAbused,
    SuicideAttemptHistory,
    RelativesOrAcquaintancesSuicidalActsHistory,
}

impl ScaleElement {
    pub const ALL: [ScaleElement; 12] = [
        ScaleElement::SuicidalIdeationAndPlan,
        ScaleElement::SevereDepression,
        ScaleElement::Hopelessness,
        ScaleElement::PsychologicalDistress,
        ScaleElement::AcuteLifeEvents,
        ScaleElement::ChronicLifeEvents,
        ScaleElement::AlcoholOrSubstanceMisuse,
        ScaleElement::SeverePhysicalIllness,
        ScaleElement::FearOfBeingAttacked,
        ScaleElement::HistoryOfBeingAbused,
        ScaleElement::SuicideAttemptHistory,
        ScaleElement::RelativesOrAcquaintancesSuicidalActsHistory,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Snake-case key used in record files.
    pub fn key(self) -> &'static str {
        match self {
            ScaleElement::SuicidalIdeationAndPlan => "suicidal_ideation_and_plan",
            ScaleElement::SevereDepression => "severe_depression",
            ScaleElement::Hopelessness => "hopelessness",
            ScaleElement::PsychologicalDistress => "psychological_distress",
            ScaleElement::AcuteLifeEvents => "acute_life_events",
            ScaleElement::ChronicLifeEvents => "chronic_life_events",
            ScaleElement::AlcoholOrSubstanceMisuse => "alcohol_or_substance_misuse",
            ScaleElement::SeverePhysicalIllness => "severe_physical_illness",
            ScaleElement::FearOfBeingAttacked => "fear_of_being_attacked",
            ScaleElement::HistoryOfBeingAbused => "history_of_being_abused",
            ScaleElement::SuicideAttemptHistory => "suicide_attempt_history",
            ScaleElement::RelativesOrAcquaintancesSuicidalActsHistory => {
                "relatives_or_acquaintances_suicidal_acts_history"
            }
        }
    }

    /// Human-readable element name, as used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            ScaleElement::SuicidalIdeationAndPlan => "Suicidal ideation and plan",
            ScaleElement::SevereDepression => "Severe depression",
            ScaleElement::Hopelessness => "Hopelessness",
            ScaleElement::PsychologicalDistress => "Psychological distress",
            ScaleElement::AcuteLifeEvents => "Acute life events",
            ScaleElement::ChronicLifeEvents => "Chronic life events",
            ScaleElement::AlcoholOrSubstanceMisuse => "Alcohol or substance misuse",
            ScaleElement::SeverePhysicalIllness => "Severe physical illness",
            ScaleElement::FearOfBeingAttacked => "Fear of being attacked",
            ScaleElement::HistoryOfBeingAbused => "History of being abused",
            ScaleElement::SuicideAttemptHistory => "Suicide attempt history",
            ScaleElement::RelativesOrAcquaintancesSuicidalActsHistory => {
                "Relatives or acquaintances suicidal acts history"
            }
        }
    }

    /// Number of questionnaire items behind the element (documentation only).
    pub fn item_count(self) -> u8 {
        match self {
            ScaleElement::SuicidalIdeationAndPlan => 3,
            ScaleElement::SevereDepression => 11,
            ScaleElement::AcuteLifeEvents
            | ScaleElement::ChronicLifeEvents
            | ScaleElement::FearOfBeingAttacked
            | ScaleElement::HistoryOfBeingAbused
            | ScaleElement::RelativesOrAcquaintancesSuicidalActsHistory => 2,
            ScaleElement::AlcoholOrSubstanceMisuse => 3,
            _ => 1,
        }
    }

    pub fn permitted_scores(self) -> &'static [u8] {
        match self {
            ScaleElement::SuicidalIdeationAndPlan => &[0, 1, 4],
            ScaleElement::AcuteLifeEvents => &[0, 2],
            _ => &[0, 1],
        }
    }

    pub fn max_score(self) -> u8 {
        *self.permitted_scores().last().unwrap()
    }

    pub fn is_permitted(self, score: u8) -> bool {
        self.permitted_scores().contains(&score)
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.key() == key)
    }
}

impl fmt::Display for ScaleElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Answers to the 12 elements. `None` means unanswered.
///
/// Values are stored as given; out-of-set values surface as
/// [`AssessmentError::InvalidAnswer`] when scoring.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManualScaleRecord {
    answers: [Option<u8>; 12],
}

impl ManualScaleRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, element: ScaleElement, score: u8) -> Self {
        self.set(element, Some(score));
        self
    }

    pub fn set(&mut self, element: ScaleElement, score: Option<u8>) {
        self.answers[element.index()] = score;
    }

    pub fn get(&self, element: ScaleElement) -> Option<u8> {
        self.answers[element.index()]
    }

    pub fn unanswered_count(&self) -> usize {
        self.answers.iter().filter(|a| a.is_none()).count()
    }

    pub fn answered(&self) -> impl Iterator<Item = (ScaleElement, u8)> + '_ {
        ScaleElement::ALL
            .into_iter()
            .filter_map(|e| self.get(e).map(|v| (e, v)))
    }

    pub fn invalid_answers(&self) -> Vec<(ScaleElement, u8)> {
        self.answered().filter(|(e, v)| !e.is_permitted(*v)).collect()
    }

    /// Every element at its maximum score.
    pub fn maximal() -> Self {
        ScaleElement::ALL
            .into_iter()
            .fold(Self::new(), |r, e| r.with(e, e.max_score()))
    }

    /// Every element answered with 0.
    pub fn all_zero() -> Self {
        ScaleElement::ALL.into_iter().fold(Self::new(), |r, e| r.with(e, 0))
    }
}

#[derive(Serialize, Deserialize)]
struct ScaleRecordRepr {
    answers: BTreeMap<String, u8>,
}

impl Serialize for ManualScaleRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ScaleRecordRepr {
            answers: self.answered().map(|(e, v)| (e.key().to_string(), v)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ManualScaleRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ScaleRecordRepr::deserialize(deserializer)?;
        let mut record = ManualScaleRecord::new();
        for (key, value) in repr.answers {
            let element = ScaleElement::from_key(&key)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown scale element `{key}`")))?;
            record.set(element, Some(value));
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub total: Option<u8>,
    pub label: Option<RiskLabel>,
    pub missing: bool,
}

impl ScaleResult {
    pub fn missing() -> Self {
        Self {
            total: None,
            label: None,
            missing: true,
        }
    }

    pub fn scored(total: u8) -> Self {
        Self {
            total: Some(total),
            label: Some(RiskLabel::from_score(total)),
            missing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            threshold: 8.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), AssessmentError> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.threshold.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AssessmentError::InvalidFusionConfig {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedAssessment {
    pub combined: f64,
    pub label: RiskLabel,
    pub manual_total: u8,
    pub llm_score: u8,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("answer {value} is not permitted for `{element}`")]
    InvalidAnswer { element: &'static str, value: u8 },
    #[error("manual scale score is missing")]
    MissingManualScore,
    #[error("fusion weights must be non-negative with a positive sum (alpha {alpha}, beta {beta})")]
    InvalidFusionConfig { alpha: f64, beta: f64 },
}

/// Sums a scale record. Unanswered elements count as 0 unless more than
/// five are unanswered, in which case the result is missing.
pub fn score_scale(rec: &ManualScaleRecord) -> Result<ScaleResult, AssessmentError> {
    if let Some((element, value)) = rec.invalid_answers().into_iter().next() {
        return Err(AssessmentError::InvalidAnswer {
            element: element.key(),
            value,
        });
    }
    if rec.unanswered_count() > MAX_UNANSWERED {
        return Ok(ScaleResult::missing());
    }
    let total: u8 = rec.answered().map(|(_, v)| v).sum();
    Ok(ScaleResult::scored(total))
}

/// Weighted fusion `alpha * manual + beta * llm`, classified at the threshold.
pub fn fuse_scores(
    manual: &ScaleResult,
    pred: &RiskPrediction,
    cfg: &FusionConfig,
) -> Result<FusedAssessment, AssessmentError> {
    cfg.validate()?;
    let manual_total = match (manual.missing, manual.total) {
        (false, Some(total)) => total,
        _ => return Err(AssessmentError::MissingManualScore),
    };
    Ok(fuse_totals(manual_total, pred.score, cfg))
}

pub(crate) fn fuse_totals(manual_total: u8, llm_score: u8, cfg: &FusionConfig) -> FusedAssessment {
    let combined = cfg.alpha * f64::from(manual_total) + cfg.beta * f64::from(llm_score);
    let label = if combined >= cfg.threshold {
        RiskLabel::HighRisk
    } else {
        RiskLabel::LowModerate
    };
    FusedAssessment {
        combined,
        label,
        manual_total,
        llm_score,
    }
}
