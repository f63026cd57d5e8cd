//! TOML run configuration.
//!
//! Every key is optional and falls back to its default. Unknown keys are an
//! error that names all of them. Relative paths are resolved against the
//! directory of the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::FusionConfig;
use crate::chunker::ChunkConfig;
use crate::evaluation::{BootstrapConfig, EvalMode};
use crate::gateway::{ChatBackend, Gateway, GatewayError, HttpBackend, HttpConfig, MockBackend, Redactor, RiskLexicon};
use crate::memory::{MemoryConfig, MemoryWeights, DEFAULT_SUMMARY_BUDGET};
use crate::predictor::{ExemplarSet, PredictError, PredictionMode, PredictorConfig};
use crate::prompts::{PromptError, PromptPaths, PromptSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Exemplars(#[from] PredictError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_ms: u64,
    pub retry_base_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            kind: BackendKind::Mock,
            base_url: http.base_url,
            model: http.model,
            temperature: 0.0,
            max_retries: http.max_retries,
            timeout_ms: http.timeout_ms,
            retry_base_ms: http.retry_base_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedactionSection {
    pub name_list_path: Option<PathBuf>,
    pub address_list_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkSection {
    pub segment_budget_chars: usize,
    pub include_operator_utterances: bool,
    pub summary_budget_chars: usize,
}

impl Default for ChunkSection {
    fn default() -> Self {
        let c = ChunkConfig::default();
        Self {
            segment_budget_chars: c.segment_budget_chars,
            include_operator_utterances: c.include_operator_utterances,
            summary_budget_chars: DEFAULT_SUMMARY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub top_k: usize,
    pub recency_decay: f64,
    pub weights: MemoryWeights,
}

impl Default for MemorySection {
    fn default() -> Self {
        let m = MemoryConfig::default();
        Self {
            top_k: m.top_k,
            recency_decay: m.recency_decay,
            weights: m.weights,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    pub summarize_path: Option<PathBuf>,
    pub importance_path: Option<PathBuf>,
    pub condense_path: Option<PathBuf>,
    pub zero_shot_path: Option<PathBuf>,
    pub few_shot_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub mode: PredictionMode,
    pub exemplars_path: Option<PathBuf>,
    pub include_entry_summaries: bool,
    /// Exact exemplar count required per outcome; 0 accepts any balance.
    pub exemplars_per_class: usize,
    pub max_output_chars: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        let p = PredictorConfig::default();
        Self {
            mode: p.mode,
            exemplars_path: None,
            include_entry_summaries: p.include_entry_summaries,
            exemplars_per_class: p.exemplars_per_class.unwrap_or(0),
            max_output_chars: p.max_output_chars,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub mode: EvalMode,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self {
            mode: EvalMode::Fused,
            resamples: b.resamples,
            seed: b.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcurrencySection {
    pub max_in_flight: usize,
}

impl Default for ConcurrencySection {
    fn default() -> Self {
        Self {
            max_in_flight: Gateway::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub output_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub seed: u64,
    pub n_cases: usize,
    pub positive_fraction: f64,
    pub missing_scale_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            seed: 7,
            n_cases: 50,
            positive_fraction: 0.4,
            missing_scale_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendSection,
    pub redaction: RedactionSection,
    pub chunk: ChunkSection,
    pub memory: MemorySection,
    pub prompts: PromptsSection,
    pub predict: PredictSection,
    pub fusion: FusionConfig,
    pub evaluation: EvaluationSection,
    pub concurrency: ConcurrencySection,
    pub io: IoSection,
    pub corpus: CorpusSection,
}

/// Every accepted dotted key.
pub const KNOWN_KEYS: &[&str] = &[
    "backend.kind",
    "backend.base_url",
    "backend.model",
    "backend.temperature",
    "backend.max_retries",
    "backend.timeout_ms",
    "backend.retry_base_ms",
    "redaction.name_list_path",
    "redaction.address_list_path",
    "chunk.segment_budget_chars",
    "chunk.include_operator_utterances",
    "chunk.summary_budget_chars",
    "memory.top_k",
    "memory.recency_decay",
    "memory.weights.recency",
    "memory.weights.importance",
    "memory.weights.relevance",
    "prompts.summarize_path",
    "prompts.importance_path",
    "prompts.condense_path",
    "prompts.zero_shot_path",
    "prompts.few_shot_path",
    "predict.mode",
    "predict.exemplars_path",
    "predict.include_entry_summaries",
    "predict.exemplars_per_class",
    "predict.max_output_chars",
    "fusion.alpha",
    "fusion.beta",
    "fusion.threshold",
    "evaluation.mode",
    "evaluation.resamples",
    "evaluation.seed",
    "concurrency.max_in_flight",
    "io.output_dir",
    "corpus.seed",
    "corpus.n_cases",
    "corpus.positive_fraction",
    "corpus.missing_scale_fraction",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            _ => out.push(key),
        }
    }
}

/// Dotted keys in `table` that are not in [`KNOWN_KEYS`]. A table where a
/// value is expected, or a value where a table is expected, counts as unknown.
pub fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let known: BTreeSet<&str> = KNOWN_KEYS.iter().copied().collect();
    let mut keys = Vec::new();
    flatten("", table, &mut keys);
    let mut unknown: Vec<String> = keys.into_iter().filter(|k| !known.contains(k.as_str())).collect();
    unknown.sort();
    unknown
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.redaction.name_list_path);
        resolve(base, &mut self.redaction.address_list_path);
        resolve(base, &mut self.prompts.summarize_path);
        resolve(base, &mut self.prompts.importance_path);
        resolve(base, &mut self.prompts.condense_path);
        resolve(base, &mut self.prompts.zero_shot_path);
        resolve(base, &mut self.prompts.few_shot_path);
        resolve(base, &mut self.predict.exemplars_path);
        if self.io.output_dir.is_relative() {
            self.io.output_dir = base.join(&self.io.output_dir);
        }
    }

    pub fn chunk_config(&self) -> ChunkConfig {
        ChunkConfig {
            segment_budget_chars: self.chunk.segment_budget_chars,
            include_operator_utterances: self.chunk.include_operator_utterances,
        }
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig {
            top_k: self.memory.top_k,
            weights: self.memory.weights,
            recency_decay: self.memory.recency_decay,
            summary_budget_chars: self.chunk.summary_budget_chars,
        }
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            mode: self.predict.mode,
            include_entry_summaries: self.predict.include_entry_summaries,
            exemplars_per_class: Some(self.predict.exemplars_per_class).filter(|n| *n > 0),
            max_output_chars: self.predict.max_output_chars,
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.evaluation.resamples,
            seed: self.evaluation.seed,
            parallel: true,
        }
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.backend.base_url.clone(),
            model: self.backend.model.clone(),
            max_retries: self.backend.max_retries,
            timeout_ms: self.backend.timeout_ms,
            retry_base_ms: self.backend.retry_base_ms,
            ..HttpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(0.0..=2.0).contains(&self.backend.temperature) {
            return invalid(format!(
                "backend.temperature {} outside [0, 2]",
                self.backend.temperature
            ));
        }
        if self.backend.timeout_ms == 0 {
            return invalid("backend.timeout_ms must be positive".into());
        }
        if self.chunk.segment_budget_chars == 0 {
            return invalid("chunk.segment_budget_chars must be positive".into());
        }
        self.memory_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.predict.max_output_chars == 0 {
            return invalid("predict.max_output_chars must be positive".into());
        }
        self.fusion
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.evaluation.resamples == 0 {
            return invalid("evaluation.resamples must be positive".into());
        }
        if self.concurrency.max_in_flight == 0 {
            return invalid("concurrency.max_in_flight must be positive".into());
        }
        if self.corpus.n_cases == 0 {
            return invalid("corpus.n_cases must be at least 1".into());
        }
        for (key, v) in [
            ("corpus.positive_fraction", self.corpus.positive_fraction),
            ("corpus.missing_scale_fraction", self.corpus.missing_scale_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{key} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Everything a run needs, built once from a config.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub gateway: Gateway,
    pub chunk: ChunkConfig,
    pub memory: MemoryConfig,
    pub predictor: PredictorConfig,
    pub exemplars: ExemplarSet,
    pub prompts: PromptSet,
    pub fusion: FusionConfig,
    pub bootstrap: BootstrapConfig,
    pub eval_mode: EvalMode,
    pub max_in_flight: usize,
}

impl Runtime {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, ConfigError> {
        let redactor = Redactor::from_files(
            cfg.redaction.name_list_path.as_deref(),
            cfg.redaction.address_list_path.as_deref(),
        )
        .map_err(|e| ConfigError::Invalid(format!("redaction list: {e}")))?;
        let backend: Arc<dyn ChatBackend> = match cfg.backend.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(RiskLexicon::default())),
            BackendKind::Http => Arc::new(HttpBackend::from_env(cfg.http_config())?),
        };
        let gateway =
            Gateway::new(backend, cfg.concurrency.max_in_flight, redactor).with_temperature(cfg.backend.temperature);
        Self::with_gateway(cfg, gateway)
    }

    /// Same as [`Runtime::from_config`] with a caller-supplied gateway.
    pub fn with_gateway(cfg: &PipelineConfig, gateway: Gateway) -> Result<Self, ConfigError> {
        let p = &cfg.prompts;
        let prompts = PromptSet::load(&PromptPaths {
            summarize: p.summarize_path.as_deref(),
            importance: p.importance_path.as_deref(),
            condense: p.condense_path.as_deref(),
            zero_shot: p.zero_shot_path.as_deref(),
            few_shot: p.few_shot_path.as_deref(),
        })?;
        let exemplars = match &cfg.predict.exemplars_path {
            Some(path) => ExemplarSet::load(path)?,
            None => ExemplarSet::builtin(),
        };
        let predictor = cfg.predictor_config();
        if predictor.mode == PredictionMode::FewShot {
            exemplars.validate(predictor.exemplars_per_class)?;
        }
        Ok(Self {
            gateway,
            chunk: cfg.chunk_config(),
            memory: cfg.memory_config(),
            predictor,
            exemplars,
            prompts,
            fusion: cfg.fusion,
            bootstrap: cfg.bootstrap_config(),
            eval_mode: cfg.evaluation.mode,
            max_in_flight: cfg.concurrency.max_in_flight,
        })
    }
}
