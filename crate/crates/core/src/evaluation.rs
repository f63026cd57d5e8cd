//! Classification metrics with percentile bootstrap confidence intervals.
//!
//! The positive class is a suicide attempt during follow-up. Metrics are
//! reported in percent. A metric whose denominator is zero is undefined
//! rather than NaN, and bootstrap resamples where it is undefined are
//! discarded and counted.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{fuse_totals, FusionConfig, ScaleResult};
use crate::domain::{FollowUpOutcome, RiskLabel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no cases left to evaluate")]
    EmptyRun,
    #[error("{0} is undefined in every bootstrap resample")]
    AllResamplesUndefined(Metric),
    #[error("case {0} has no model prediction")]
    MissingPrediction(String),
    #[error("resample count must be at least 1")]
    NoResamples,
    #[error("{0}")]
    InvalidFusion(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, predicted: RiskLabel, actual: bool) {
        match (predicted.is_high(), actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Tallies `(predicted, attempted_suicide)` pairs.
pub fn confusion(cases: &[(RiskLabel, bool)]) -> Result<ConfusionMatrix, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut cm = ConfusionMatrix::default();
    for &(predicted, actual) in cases {
        cm.add(predicted, actual);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sensitivity,
    Specificity,
    Precision,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Sensitivity, Metric::Specificity, Metric::Precision, Metric::F1];
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
        })
    }
}

/// Point metrics in percent; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl PointMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::Precision => self.precision,
            Metric::F1 => self.f1,
        }
    }
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> PointMetrics {
    PointMetrics {
        sensitivity: percent(cm.tp, cm.tp + cm.fn_),
        specificity: percent(cm.tn, cm.tn + cm.fp),
        precision: percent(cm.tp, cm.tp + cm.fp),
        f1: percent(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    }
}

/// Harmonic mean of precision and recall (both in percent).
pub fn f1_from_precision_recall(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    /// Run resamples on the rayon pool. Results are identical either way.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 2000,
            seed: 7,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub defined: bool,
    pub discarded_resamples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "llm")]
    LlmOnly,
    #[serde(rename = "manual")]
    ManualOnly,
    #[serde(rename = "fused")]
    Fused,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::LlmOnly => "llm",
            EvalMode::ManualOnly => "manual",
            EvalMode::Fused => "fused",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(EvalMode::LlmOnly),
            "manual" => Ok(EvalMode::ManualOnly),
            "fused" => Ok(EvalMode::Fused),
            other => Err(format!("unknown evaluation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode: Option<EvalMode>,
    pub confusion: ConfusionMatrix,
    pub sensitivity: MetricEstimate,
    pub specificity: MetricEstimate,
    pub precision: MetricEstimate,
    pub f1: MetricEstimate,
    pub n_cases: usize,
    pub n_excluded: usize,
    pub seed: u64,
    pub resamples: usize,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> &MetricEstimate {
        match metric {
            Metric::Sensitivity => &self.sensitivity,
            Metric::Specificity => &self.specificity,
            Metric::Precision => &self.precision,
            Metric::F1 => &self.f1,
        }
    }
}

/// Value at nearest rank `ceil(q * n)` (1-based) of sorted data.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn resample_metrics(cases: &[(RiskLabel, bool)], seed: u64, index: u64) -> PointMetrics {
    // one generator stream per resample, so serial and parallel runs agree
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = cases.len() as u64;
    let mut cm = ConfusionMatrix::default();
    for _ in 0..n {
        let (predicted, actual) = cases[rng.random_range(0..n) as usize];
        cm.add(predicted, actual);
    }
    metrics(&cm)
}

/// Point metrics on `cases` with 95% percentile bootstrap intervals.
pub fn bootstrap_ci(cases: &[(RiskLabel, bool)], cfg: &BootstrapConfig) -> Result<MetricReport, EvalError> {
    let cm = confusion(cases)?;
    if cfg.resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let point = metrics(&cm);

    let draws: Vec<PointMetrics> = if cfg.parallel {
        (0..cfg.resamples as u64)
            .into_par_iter()
            .map(|i| resample_metrics(cases, cfg.seed, i))
            .collect()
    } else {
        (0..cfg.resamples as u64)
            .map(|i| resample_metrics(cases, cfg.seed, i))
            .collect()
    };

    let estimate = |metric: Metric| -> Result<MetricEstimate, EvalError> {
        let mut values: Vec<f64> = draws.iter().filter_map(|d| d.get(metric)).collect();
        let discarded = cfg.resamples - values.len();
        let point = point.get(metric);
        if point.is_none() {
            return Ok(MetricEstimate {
                point: None,
                ci_low: None,
                ci_high: None,
                defined: false,
                discarded_resamples: discarded,
            });
        }
        if values.is_empty() {
            return Err(EvalError::AllResamplesUndefined(metric));
        }
        values.sort_by(f64::total_cmp);
        Ok(MetricEstimate {
            point,
            ci_low: Some(nearest_rank(&values, 0.025)),
            ci_high: Some(nearest_rank(&values, 0.975)),
            defined: true,
            discarded_resamples: discarded,
        })
    };

    Ok(MetricReport {
        mode: None,
        confusion: cm,
        sensitivity: estimate(Metric::Sensitivity)?,
        specificity: estimate(Metric::Specificity)?,
        precision: estimate(Metric::Precision)?,
        f1: estimate(Metric::F1)?,
        n_cases: cases.len(),
        n_excluded: 0,
        seed: cfg.seed,
        resamples: cfg.resamples,
    })
}

/// Everything evaluation needs to know about one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub case_id: String,
    pub llm_score: Option<u8>,
    pub manual: Option<ScaleResult>,
    pub outcome: Option<FollowUpOutcome>,
}

/// Evaluates one prediction channel. Cases without a confirmed outcome are
/// excluded in every mode; manual and fused modes also exclude cases whose
/// scale score is missing. Rows are ordered by case id before resampling so
/// the report does not depend on input order.
pub fn evaluate_run(
    rows: &[EvalRow],
    mode: EvalMode,
    fusion: &FusionConfig,
    bootstrap: &BootstrapConfig,
) -> Result<MetricReport, EvalError> {
    if mode == EvalMode::Fused {
        fusion.validate().map_err(|e| EvalError::InvalidFusion(e.to_string()))?;
    }
    let mut kept: Vec<(&str, RiskLabel, bool)> = Vec::with_capacity(rows.len());
    let mut excluded = 0;
    for row in rows {
        let actual = match row.outcome {
            Some(o) if o.is_confirmed() => o.attempted_suicide,
            _ => {
                excluded += 1;
                continue;
            }
        };
        let manual_total = row.manual.and_then(|m| if m.missing { None } else { m.total });
        let predicted = match mode {
            EvalMode::LlmOnly => {
                let score = row
                    .llm_score
                    .ok_or_else(|| EvalError::MissingPrediction(row.case_id.clone()))?;
                RiskLabel::from_score(score)
            }
            EvalMode::ManualOnly => match manual_total {
                Some(total) => RiskLabel::from_score(total),
                None => {
                    excluded += 1;
                    continue;
                }
            },
            EvalMode::Fused => match manual_total {
                Some(total) => {
                    let score = row
                        .llm_score
                        .ok_or_else(|| EvalError::MissingPrediction(row.case_id.clone()))?;
                    fuse_totals(total, score, fusion).label
                }
                None => {
                    excluded += 1;
                    continue;
                }
            },
        };
        kept.push((row.case_id.as_str(), predicted, actual));
    }
    if kept.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    kept.sort_by(|a, b| a.0.cmp(b.0));
    let pairs: Vec<(RiskLabel, bool)> = kept.iter().map(|&(_, p, a)| (p, a)).collect();
    let mut report = bootstrap_ci(&pairs, bootstrap)?;
    report.mode = Some(mode);
    report.n_excluded = excluded;
    Ok(report)
}

fn cell(e: &MetricEstimate) -> String {
    match (e.point, e.ci_low, e.ci_high) {
        (Some(p), Some(lo), Some(hi)) => format!("{p:.2} [{lo:.2}, {hi:.2}]"),
        (Some(p), _, _) => format!("{p:.2}"),
        _ => "n/a".to_string(),
    }
}

/// Plain-text results table, one row per method: `point [low, high]` per
/// metric as 2-decimal percentages.
pub fn format_table(rows: &[(&str, &MetricReport)]) -> String {
    let header = ["Method", "Sensitivity", "Specificity", "Precision", "F1-score"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.to_string(),
                cell(&r.sensitivity),
                cell(&r.specificity),
                cell(&r.precision),
                cell(&r.f1),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&mut out, &header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in &body {
        line(&mut out, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    use RiskLabel::{HighRisk as H, LowModerate as L};

    fn realize(cm: ConfusionMatrix) -> Vec<(RiskLabel, bool)> {
        let mut v = Vec::new();
        v.extend(std::iter::repeat_n((H, true), cm.tp as usize));
        v.extend(std::iter::repeat_n((H, false), cm.fp as usize));
        v.extend(std::iter::repeat_n((L, true), cm.fn_ as usize));
        v.extend(std::iter::repeat_n((L, false), cm.tn as usize));
        v
    }

    fn round2(x: Option<f64>) -> f64 {
        (x.unwrap() * 100.0).round() / 100.0
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        assert_eq!(
            confusion(&realize(ConfusionMatrix::new(10, 0, 0, 10))).unwrap(),
            ConfusionMatrix::new(10, 0, 0, 10)
        );
        let all_high: Vec<_> = (0..46).map(|i| (H, i < 20)).collect();
        assert_eq!(confusion(&all_high).unwrap(), ConfusionMatrix::new(20, 26, 0, 0));
        assert_eq!(confusion(&[]), Err(EvalError::EmptyRun));
    }

    #[test]
    fn random_fixture_matches_independent_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cases: Vec<(RiskLabel, bool)> = (0..50)
            .map(|_| (if rng.random_bool(0.5) { H } else { L }, rng.random_bool(0.4)))
            .collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (p, a) in &cases {
            if *p == H && *a {
                tp += 1;
            }
            if *p == H && !*a {
                fp += 1;
            }
            if *p == L && *a {
                fn_ += 1;
            }
            if *p == L && !*a {
                tn += 1;
            }
        }
        assert_eq!(confusion(&cases).unwrap(), ConfusionMatrix::new(tp, fp, fn_, tn));
    }

    #[test]
    fn few_and_zero_shot_rows() {
        let m = metrics(&ConfusionMatrix::new(18, 10, 2, 16));
        assert_eq!(
            [
                round2(m.sensitivity),
                round2(m.specificity),
                round2(m.precision),
                round2(m.f1)
            ],
            [90.00, 61.54, 64.29, 75.00]
        );
        let m = metrics(&ConfusionMatrix::new(9, 1, 11, 25));
        assert_eq!(
            [
                round2(m.sensitivity),
                round2(m.specificity),
                round2(m.precision),
                round2(m.f1)
            ],
            [45.00, 96.15, 90.00, 60.00]
        );
    }

    #[test]
    fn zero_denominators_are_undefined() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 5, 5));
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.specificity, Some(100.0));
        assert_eq!(m.f1, Some(0.0));
    }

    #[test]
    fn single_case_bootstrap_has_zero_width() {
        let r = bootstrap_ci(
            &[(H, true)],
            &BootstrapConfig {
                resamples: 50,
                ..Default::default()
            },
        )
        .unwrap();
        for m in Metric::ALL {
            let e = r.get(m);
            if e.defined {
                assert_eq!(e.ci_low, e.ci_high);
                assert_eq!(e.ci_low, e.point);
            }
        }
        assert!(!r.specificity.defined);
        assert_eq!(r.specificity.discarded_resamples, 50);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cases = realize(ConfusionMatrix::new(18, 10, 2, 16));
        let par = bootstrap_ci(
            &cases,
            &BootstrapConfig {
                resamples: 500,
                seed: 3,
                parallel: true,
            },
        )
        .unwrap();
        let ser = bootstrap_ci(
            &cases,
            &BootstrapConfig {
                resamples: 500,
                seed: 3,
                parallel: false,
            },
        )
        .unwrap();
        assert_eq!(par, ser);
        let again = bootstrap_ci(
            &cases,
            &BootstrapConfig {
                resamples: 500,
                seed: 3,
                parallel: true,
            },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&par).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.025), 3.0);
        assert_eq!(nearest_rank(&v, 0.975), 98.0);
        assert_eq!(nearest_rank(&[5.0], 0.025), 5.0);
    }

    fn rows_with_missing(n_missing: usize) -> Vec<EvalRow> {
        // 20 positives, 26 negatives; the first n_missing rows lack a usable scale
        (0..46)
            .map(|i| EvalRow {
                case_id: format!("case-{i:02}"),
                llm_score: Some(if i < 20 { 10 } else { 3 }),
                manual: Some(if i < n_missing {
                    ScaleResult::missing()
                } else {
                    ScaleResult::scored(if i % 2 == 0 { 9 } else { 4 })
                }),
                outcome: Some(FollowUpOutcome::confirmed(i < 20)),
            })
            .collect()
    }

    #[test]
    fn fused_mode_excludes_missing_scales() {
        let rows = rows_with_missing(9);
        let cfg = BootstrapConfig {
            resamples: 200,
            ..Default::default()
        };
        let fused = evaluate_run(&rows, EvalMode::Fused, &FusionConfig::default(), &cfg).unwrap();
        assert_eq!((fused.n_cases, fused.n_excluded), (37, 9));
        let manual = evaluate_run(&rows, EvalMode::ManualOnly, &FusionConfig::default(), &cfg).unwrap();
        assert_eq!((manual.n_cases, manual.n_excluded), (37, 9));
        let llm = evaluate_run(&rows, EvalMode::LlmOnly, &FusionConfig::default(), &cfg).unwrap();
        assert_eq!((llm.n_cases, llm.n_excluded), (46, 0));
    }

    #[test]
    fn unconfirmed_outcomes_are_excluded() {
        let mut rows = rows_with_missing(0);
        for r in &mut rows {
            r.outcome = None;
        }
        assert_eq!(
            evaluate_run(
                &rows,
                EvalMode::LlmOnly,
                &FusionConfig::default(),
                &BootstrapConfig::default()
            ),
            Err(EvalError::EmptyRun)
        );
    }

    #[test]
    fn report_is_input_order_invariant() {
        let mut rows = rows_with_missing(5);
        let cfg = BootstrapConfig {
            resamples: 300,
            ..Default::default()
        };
        let a = evaluate_run(&rows, EvalMode::Fused, &FusionConfig::default(), &cfg).unwrap();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let b = evaluate_run(&rows, EvalMode::Fused, &FusionConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_layout() {
        let r = bootstrap_ci(
            &realize(ConfusionMatrix::new(18, 10, 2, 16)),
            &BootstrapConfig {
                resamples: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let t = format_table(&[("Few-shot LLM", &r)]);
        assert!(t.lines().next().unwrap().contains("Sensitivity"));
        assert!(t.contains("90.00 ["));
    }

    fn arb_cm() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..40, 0u64..40, 0u64..40, 0u64..40)
            .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
            .prop_map(|(a, b, c, d)| ConfusionMatrix::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn f1_forms_agree(cm in arb_cm()) {
            let m = metrics(&cm);
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.sensitivity, m.f1) {
                if let Some(alt) = f1_from_precision_recall(p, r) {
                    prop_assert!((alt - f).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn replication_never_widens_sensitivity_ci(tp in 1u64..12, fn_ in 0u64..6, fp in 0u64..6, tn in 1u64..12) {
            let base = realize(ConfusionMatrix::new(tp, fp, fn_, tn));
            let big: Vec<_> = base.iter().cycle().take(base.len() * 10).copied().collect();
            let cfg = BootstrapConfig { resamples: 400, seed: 11, parallel: true };
            let small = bootstrap_ci(&base, &cfg).unwrap();
            let large = bootstrap_ci(&big, &cfg).unwrap();
            let width = |r: &MetricReport| r.sensitivity.ci_high.unwrap() - r.sensitivity.ci_low.unwrap();
            prop_assert!(width(&large) <= width(&small) + 1e-9);
        }

        #[test]
        fn ci_brackets_point_when_mostly_defined(cm in arb_cm()) {
            let cases = realize(cm);
            let cfg = BootstrapConfig { resamples: 400, seed: 5, parallel: true };
            if let Ok(r) = bootstrap_ci(&cases, &cfg) {
                for m in Metric::ALL {
                    let e = r.get(m);
                    if e.defined && (e.discarded_resamples as f64) <= 0.05 * cfg.resamples as f64 {
                        prop_assert!(e.ci_low.unwrap() <= e.point.unwrap() + 1e-9);
                        prop_assert!(e.point.unwrap() <= e.ci_high.unwrap() + 1e-9);
                    }
                }
            }
        }
    }
}
