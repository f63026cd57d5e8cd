//! Batch stages over case files.
//!
//! Cases are independent. Model-backed stages run on a worker pool of
//! `max_in_flight` threads; results pass through a single ordered writer so
//! output files follow input order. The first failing case, in input order,
//! stops the stage.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde_json::json;
use thiserror::Error;

use crate::assessment::{fuse_scores, score_scale, AssessmentError, ScaleResult};
use crate::domain::{duplicate_case_ids, validate_case, CaseRecord, Finding};
use crate::evaluation::{evaluate_run, format_table, EvalError, EvalMode, EvalRow, MetricReport};
use crate::gateway::GatewayError;
use crate::memory::{summarize_case, MemoryError};
use crate::predictor::{predict_case, PredictError};

use super::config::{ConfigError, Runtime};
use super::io::{
    write_json, write_text, AssessmentLine, IoError, JsonlWriter, PredictionLine, StreamLine, ASSESSMENTS_FILE,
    PREDICTIONS_FILE, REPORT_FILE, REPORT_TABLE_FILE, STREAMS_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_TRANSPORT: i32 = 2;

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Assess(#[from] AssessmentError),
}

impl StageError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            StageError::Memory(e) => e.gateway_error(),
            StageError::Predict(PredictError::Gateway(e)) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("case {case_id}: {}", findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidCase { case_id: String, findings: Vec<Finding> },
    #[error("duplicate case ids: {}", .0.join(", "))]
    DuplicateCases(Vec<String>),
    #[error("case {case_id}: {source}")]
    Case {
        case_id: String,
        #[source]
        source: StageError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// 2 for failures reaching or talking to the model backend, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Case { source, .. } => match source.gateway_error() {
                Some(
                    GatewayError::Transport { .. } | GatewayError::Auth { .. } | GatewayError::BackendRefusal { .. },
                ) => EXIT_TRANSPORT,
                _ => EXIT_VALIDATION,
            },
            _ => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io(_) => "io",
            PipelineError::InvalidCase { .. } => "invalid_case",
            PipelineError::DuplicateCases(_) => "duplicate_cases",
            PipelineError::Case { source, .. } => match source {
                StageError::Memory(_) => "summarize",
                StageError::Predict(PredictError::UnparseableResponse { .. }) => "unparseable_response",
                StageError::Predict(_) => "predict",
                StageError::Assess(_) => "assess",
            },
            PipelineError::Eval(EvalError::EmptyRun) => "empty_run",
            PipelineError::Eval(_) => "evaluate",
        }
    }

    /// Machine-readable error record for the diagnostic stream.
    pub fn record(&self) -> serde_json::Value {
        let mut rec = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match self {
            PipelineError::InvalidCase { case_id, findings } => {
                rec["case_id"] = json!(case_id);
                rec["findings"] = json!(findings);
            }
            PipelineError::Case { case_id, source } => {
                rec["case_id"] = json!(case_id);
                if let Some(g) = source.gateway_error() {
                    rec["gateway_error"] = json!(g.to_string());
                }
            }
            _ => {}
        }
        rec
    }
}

/// Runs `work` over `items` on up to `workers` threads and hands results to
/// `sink` in input order on the calling thread. Stops scheduling new items
/// once `sink` returns false.
pub fn for_each_ordered<T, R, W, S>(items: &[T], workers: usize, work: W, mut sink: S)
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(usize, R) -> bool,
{
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() || tx.send((i, work(&items[i]))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                expected += 1;
                if !sink(expected - 1, r) {
                    stop.store(true, Ordering::Relaxed);
                    return;
                }
            }
        }
    });
}

/// Shared driver: ordered results, optional streaming writer, stop at first error.
fn run_stage<T, L, W>(items: &[T], workers: usize, out: Option<&Path>, work: W) -> Result<Vec<L>, PipelineError>
where
    T: Sync,
    L: Send + serde::Serialize,
    W: Fn(&T) -> Result<L, PipelineError> + Sync,
{
    let mut writer = out.map(JsonlWriter::create).transpose()?;
    let mut lines = Vec::with_capacity(items.len());
    let mut failure = None;
    for_each_ordered(items, workers, work, |_, result| match result {
        Ok(line) => {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write(&line) {
                    failure = Some(e.into());
                    return false;
                }
            }
            lines.push(line);
            true
        }
        Err(e) => {
            failure = Some(e);
            false
        }
    });
    if let Some(w) = writer {
        w.finish()?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(lines),
    }
}

/// Rejects invalid cases and duplicate ids before any model call.
pub fn validate_cases(cases: &[CaseRecord]) -> Result<(), PipelineError> {
    let dups = duplicate_case_ids(cases);
    if !dups.is_empty() {
        return Err(PipelineError::DuplicateCases(dups));
    }
    for case in cases {
        let findings = validate_case(case);
        if !findings.is_empty() {
            return Err(PipelineError::InvalidCase {
                case_id: case.case_id.clone(),
                findings,
            });
        }
    }
    Ok(())
}

pub fn summarize_all(cases: &[CaseRecord], rt: &Runtime, out: Option<&Path>) -> Result<Vec<StreamLine>, PipelineError> {
    validate_cases(cases)?;
    run_stage(cases, rt.max_in_flight, out, |case| {
        summarize_case(&case.transcript, &rt.gateway, &rt.chunk, &rt.memory, &rt.prompts)
            .map(|stream| StreamLine::new(&case.case_id, stream))
            .map_err(|e| PipelineError::Case {
                case_id: case.case_id.clone(),
                source: e.into(),
            })
    })
}

pub fn predict_all(
    streams: &[StreamLine],
    rt: &Runtime,
    out: Option<&Path>,
) -> Result<Vec<PredictionLine>, PipelineError> {
    run_stage(streams, rt.max_in_flight, out, |line| {
        predict_case(
            &line.stream(),
            &rt.gateway,
            &rt.predictor,
            Some(&rt.exemplars),
            &rt.prompts,
        )
        .map(|prediction| PredictionLine {
            case_id: line.case_id.clone(),
            prediction,
        })
        .map_err(|e| PipelineError::Case {
            case_id: line.case_id.clone(),
            source: e.into(),
        })
    })
}

fn scale_result(case: &CaseRecord) -> Result<ScaleResult, PipelineError> {
    match &case.scale {
        Some(rec) => score_scale(rec).map_err(|e| PipelineError::Case {
            case_id: case.case_id.clone(),
            source: e.into(),
        }),
        None => Ok(ScaleResult::missing()),
    }
}

/// Scores each case's scale and, when a prediction for the case exists and
/// its scale is usable, the fused assessment.
pub fn assess_all(
    cases: &[CaseRecord],
    predictions: Option<&[PredictionLine]>,
    rt: &Runtime,
    out: Option<&Path>,
) -> Result<Vec<AssessmentLine>, PipelineError> {
    let by_case: HashMap<&str, &PredictionLine> = predictions
        .unwrap_or_default()
        .iter()
        .map(|p| (p.case_id.as_str(), p))
        .collect();
    run_stage(cases, 1, out, |case| {
        let scale = scale_result(case)?;
        let fused = match by_case.get(case.case_id.as_str()) {
            Some(p) if !scale.missing => {
                Some(
                    fuse_scores(&scale, &p.prediction, &rt.fusion).map_err(|e| PipelineError::Case {
                        case_id: case.case_id.clone(),
                        source: e.into(),
                    })?,
                )
            }
            _ => None,
        };
        Ok(AssessmentLine {
            case_id: case.case_id.clone(),
            scale,
            fused,
        })
    })
}

/// Joins cases with predictions by case id.
pub fn eval_rows(cases: &[CaseRecord], predictions: &[PredictionLine]) -> Result<Vec<EvalRow>, PipelineError> {
    let by_case: HashMap<&str, u8> = predictions
        .iter()
        .map(|p| (p.case_id.as_str(), p.prediction.score))
        .collect();
    cases
        .iter()
        .map(|case| {
            Ok(EvalRow {
                case_id: case.case_id.clone(),
                llm_score: by_case.get(case.case_id.as_str()).copied(),
                manual: Some(scale_result(case)?),
                outcome: case.outcome,
            })
        })
        .collect()
}

pub fn evaluate(rows: &[EvalRow], mode: EvalMode, rt: &Runtime) -> Result<MetricReport, PipelineError> {
    Ok(evaluate_run(rows, mode, &rt.fusion, &rt.bootstrap)?)
}

/// Results table over every evaluation mode that can be computed.
pub fn report_table(rows: &[EvalRow], rt: &Runtime) -> String {
    let llm_name = format!("LLM ({})", rt.predictor.mode);
    let fused_name = format!("LLM ({}) + manual scale", rt.predictor.mode);
    let modes = [
        (llm_name.as_str(), EvalMode::LlmOnly),
        ("Manual scale", EvalMode::ManualOnly),
        (fused_name.as_str(), EvalMode::Fused),
    ];
    let mut reports = Vec::new();
    let mut notes = String::new();
    for (name, mode) in modes {
        match evaluate_run(rows, mode, &rt.fusion, &rt.bootstrap) {
            Ok(r) => reports.push((name, r)),
            Err(e) => notes.push_str(&format!("{name}: {e}\n")),
        }
    }
    let refs: Vec<(&str, &MetricReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let mut table = format_table(&refs);
    for (name, r) in &reports {
        table.push_str(&format!(
            "{name}: n = {}, excluded = {}, tp/fp/fn/tn = {}/{}/{}/{}\n",
            r.n_cases, r.n_excluded, r.confusion.tp, r.confusion.fp, r.confusion.fn_, r.confusion.tn
        ));
    }
    table.push_str(&format!(
        "95% percentile bootstrap, {} resamples, seed {}\n",
        rt.bootstrap.resamples, rt.bootstrap.seed
    ));
    table.push_str(&notes);
    table
}

/// Writes `report.json` for `mode` and `report.txt` for all modes.
pub fn write_reports(
    rows: &[EvalRow],
    mode: EvalMode,
    rt: &Runtime,
    out_dir: &Path,
) -> Result<MetricReport, PipelineError> {
    let report = evaluate(rows, mode, rt)?;
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    write_text(&out_dir.join(REPORT_TABLE_FILE), &report_table(rows, rt))?;
    Ok(report)
}

/// Everything `run` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub streams: Vec<StreamLine>,
    pub predictions: Vec<PredictionLine>,
    pub assessments: Vec<AssessmentLine>,
    pub report: MetricReport,
}

/// Full chain: summaries, predictions, assessments and the report.
pub fn run_all(cases: &[CaseRecord], rt: &Runtime, out_dir: &Path) -> Result<RunOutput, PipelineError> {
    let streams = summarize_all(cases, rt, Some(&out_dir.join(STREAMS_FILE)))?;
    let predictions = predict_all(&streams, rt, Some(&out_dir.join(PREDICTIONS_FILE)))?;
    let assessments = assess_all(cases, Some(&predictions), rt, Some(&out_dir.join(ASSESSMENTS_FILE)))?;
    let rows = eval_rows(cases, &predictions)?;
    let report = write_reports(&rows, rt.eval_mode, rt, out_dir)?;
    Ok(RunOutput {
        streams,
        predictions,
        assessments,
        report,
    })
}
