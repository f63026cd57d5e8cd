//! Line-delimited JSON record files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{FusedAssessment, ManualScaleRecord, ScaleResult};
use crate::domain::{CaseRecord, CaseSummaryStream, FollowUpOutcome, SegmentSummary, TranscriptDocument, Utterance};
use crate::predictor::RiskPrediction;

pub const CASES_FILE: &str = "cases.jsonl";
pub const STREAMS_FILE: &str = "streams.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const ASSESSMENTS_FILE: &str = "assessments.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Record { path: String, line: usize, detail: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// One line of `cases.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseLine {
    pub case_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ManualScaleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<FollowUpOutcome>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl From<CaseLine> for CaseRecord {
    fn from(line: CaseLine) -> Self {
        CaseRecord {
            case_id: line.case_id,
            transcript: TranscriptDocument::from_utterances(line.utterances),
            scale: line.scale,
            outcome: line.outcome,
            meta: line.meta,
        }
    }
}

impl From<&CaseRecord> for CaseLine {
    fn from(case: &CaseRecord) -> Self {
        CaseLine {
            case_id: case.case_id.clone(),
            utterances: case.transcript.utterances.clone(),
            scale: case.scale.clone(),
            outcome: case.outcome,
            meta: case.meta.clone(),
        }
    }
}

/// One line of `streams.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamLine {
    pub case_id: String,
    pub entries: Vec<SegmentSummary>,
    pub final_summary: Option<String>,
}

impl StreamLine {
    pub fn new(case_id: &str, stream: CaseSummaryStream) -> Self {
        Self {
            case_id: case_id.to_string(),
            entries: stream.entries,
            final_summary: stream.final_summary,
        }
    }

    pub fn stream(&self) -> CaseSummaryStream {
        CaseSummaryStream {
            entries: self.entries.clone(),
            final_summary: self.final_summary.clone(),
        }
    }
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub case_id: String,
    #[serde(flatten)]
    pub prediction: RiskPrediction,
}

/// One line of `assessments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentLine {
    pub case_id: String,
    pub scale: ScaleResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<FusedAssessment>,
}

/// Reads every non-blank line of `path` as one record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IoError::Record {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Line-at-a-time writer for a record file.
pub struct JsonlWriter {
    out: BufWriter<File>,
    path: String,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(file_err(dir))?;
        }
        let file = File::create(path).map_err(file_err(path))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), IoError> {
        let err = |source| IoError::File {
            path: self.path.clone(),
            source,
        };
        let line = serde_json::to_string(record).expect("records serialize");
        self.out.write_all(line.as_bytes()).map_err(err)?;
        self.out.write_all(b"\n").map_err(|source| IoError::File {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.out.flush().map_err(|source| IoError::File {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Record {
        path: path.display().to_string(),
        line: e.line(),
        detail: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, text).map_err(file_err(path))
}

pub fn read_cases(path: &Path) -> Result<Vec<CaseRecord>, IoError> {
    Ok(read_jsonl::<CaseLine>(path)?
        .into_iter()
        .map(CaseRecord::from)
        .collect())
}
