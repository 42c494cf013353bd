//! Run configuration: a TOML file that wires every knob of the pipeline.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateGenConfig, LexicalRetriever, Retriever, SubprocessRetriever};
use crate::eval::ScoreOptions;
use crate::kb::KnowledgeBase;
use crate::llm::{
    BudgetedBackend, ChatBackend, HttpBackend, RecordingBackend, ReplayBackend, RequestBudget,
    RetryBackend, RetryPolicy, ScriptedBackend,
};
use crate::pipeline::{AblationVariant, PipelineOptions};
use crate::prompting::PromptLayout;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("failed to build backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RetrieverKind {
    #[default]
    Lexical,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverConfig {
    pub enabled: bool,
    pub kind: RetrieverKind,
    /// Program and arguments for the `subprocess` kind.
    pub command: Vec<String>,
    /// Top prior below this triggers the retrieval backup.
    pub min_top_prior: f64,
    /// Characters of context on each side handed to the retriever.
    pub context_window: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kind: RetrieverKind::Lexical,
            command: Vec::new(),
            min_top_prior: 0.0,
            context_window: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptingConfig {
    /// Characters of document context on each side of the marked mention.
    pub context_window: usize,
    /// Hard cap on excerpt length; 0 means unlimited.
    pub max_excerpt_chars: usize,
}

impl Default for PromptingConfig {
    fn default() -> Self {
        Self { context_window: 200, max_excerpt_chars: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    #[default]
    Scripted,
    /// Live backend whose successful exchanges are appended to the cassette.
    Record,
    /// Cassette lookups only (or with a live fallback when not strict).
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "scripted" => Ok(Self::Scripted),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!(
                "unknown backend `{other}` (expected http, scripted, record, or replay)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub jitter_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500, jitter_ms: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub max_requests: Option<u64>,
    pub max_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub base_url: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    /// Canned answer used by the `scripted` backend.
    pub scripted_response: String,
    pub cassette: Option<PathBuf>,
    /// In replay mode, fail on cassette misses instead of falling back.
    pub strict_replay: bool,
    pub retry: RetryConfig,
    pub budget: BudgetConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Scripted,
            base_url: None,
            model: "scripted".to_string(),
            temperature: 0.0,
            max_tokens: 256,
            parallelism: 4,
            scripted_response: "A.".to_string(),
            cassette: None,
            strict_replay: true,
            retry: RetryConfig::default(),
            budget: BudgetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub strict_abstention: bool,
    pub allow_missing_predictions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub kb_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub templates_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Candidate list size.
    pub k: usize,
    pub variant: AblationVariant,
    pub retriever: RetrieverConfig,
    pub prompting: PromptingConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kb_path: None,
            index_path: None,
            templates_path: None,
            output_dir: None,
            k: 10,
            variant: AblationVariant::Full,
            retriever: RetrieverConfig::default(),
            prompting: PromptingConfig::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), msg: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.k > 25 {
            return Err(ConfigError::Invalid(format!(
                "k must be between 1 and 25 (got {}): the option list holds at most 26 letters \
                 including the final None entry",
                self.k
            )));
        }
        if self.llm.parallelism == 0 {
            return Err(ConfigError::Invalid("llm.parallelism must be at least 1".into()));
        }
        if self.llm.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("llm.retry.max_attempts must be at least 1".into()));
        }
        if self.llm.backend == BackendKind::Http && self.llm.base_url.is_none() {
            return Err(ConfigError::Invalid("llm.backend = \"http\" requires llm.base_url".into()));
        }
        if matches!(self.llm.backend, BackendKind::Record | BackendKind::Replay)
            && self.llm.cassette.is_none()
        {
            return Err(ConfigError::Invalid(format!(
                "llm.backend = \"{}\" requires llm.cassette",
                if self.llm.backend == BackendKind::Record { "record" } else { "replay" }
            )));
        }
        if self.retriever.enabled
            && self.retriever.kind == RetrieverKind::Subprocess
            && self.retriever.command.is_empty()
        {
            return Err(ConfigError::Invalid(
                "retriever.kind = \"subprocess\" requires retriever.command".into(),
            ));
        }
        Ok(())
    }

    /// The configuration as JSON, for embedding into reports.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    pub fn gen_config(&self) -> CandidateGenConfig {
        CandidateGenConfig {
            k: self.k,
            min_top_prior: self.retriever.min_top_prior,
            retrieval_context_window: self.retriever.context_window,
        }
    }

    pub fn layout(&self) -> PromptLayout {
        PromptLayout {
            context_window: self.prompting.context_window,
            max_excerpt_chars: self.prompting.max_excerpt_chars,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            gen: self.gen_config(),
            layout: self.layout(),
            model: self.llm.model.clone(),
            temperature: self.llm.temperature,
            max_tokens: self.llm.max_tokens,
            parallelism: self.llm.parallelism,
            variant: self.variant,
        }
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            strict_abstention: self.eval.strict_abstention,
            allow_missing: self.eval.allow_missing_predictions,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.llm.retry.max_attempts,
            base_delay: Duration::from_millis(self.llm.retry.base_delay_ms),
            jitter: Duration::from_millis(self.llm.retry.jitter_ms),
        }
    }

    /// Builds the retriever, or `None` when retrieval is disabled.
    pub fn build_retriever(
        &self,
        kb: &KnowledgeBase,
    ) -> Result<Option<Box<dyn Retriever>>, ConfigError> {
        if !self.retriever.enabled {
            return Ok(None);
        }
        Ok(Some(match self.retriever.kind {
            RetrieverKind::Lexical => Box::new(LexicalRetriever::build(kb)),
            RetrieverKind::Subprocess => {
                let (program, args) = self.retriever.command.split_first().ok_or_else(|| {
                    ConfigError::Invalid("retriever.command must not be empty".into())
                })?;
                Box::new(SubprocessRetriever::new(program.clone(), args.to_vec()))
            }
        }))
    }

    /// Live backend (no recording or replay): HTTP behind retries, or the
    /// scripted stand-in. Always budgeted so caps from the config apply.
    fn build_live_backend(&self) -> Result<Box<dyn ChatBackend>, ConfigError> {
        let budget =
            Arc::new(RequestBudget::new(self.llm.budget.max_requests, self.llm.budget.max_tokens));
        let inner: Box<dyn ChatBackend> = match &self.llm.base_url {
            Some(base_url) => Box::new(RetryBackend::new(
                HttpBackend::from_env(base_url),
                self.retry_policy(),
            )),
            None => Box::new(ScriptedBackend::always(self.llm.scripted_response.clone())),
        };
        Ok(Box::new(BudgetedBackend::new(inner, budget)))
    }

    /// Assembles the chat backend described by `[llm]`.
    pub fn build_backend(&self) -> Result<Box<dyn ChatBackend>, ConfigError> {
        self.validate()?;
        match self.llm.backend {
            BackendKind::Scripted | BackendKind::Http => self.build_live_backend(),
            BackendKind::Record => {
                let cassette = self.llm.cassette.as_deref().expect("validated");
                let recorder = RecordingBackend::create(self.build_live_backend()?, cassette)
                    .map_err(|e| ConfigError::Backend(e.to_string()))?;
                Ok(Box::new(recorder))
            }
            BackendKind::Replay => {
                let cassette = self.llm.cassette.as_deref().expect("validated");
                let replay = if self.llm.strict_replay {
                    ReplayBackend::strict(cassette)
                } else {
                    ReplayBackend::permissive(cassette, self.build_live_backend()?)
                }
                .map_err(|e| ConfigError::Backend(e.to_string()))?;
                Ok(Box::new(replay))
            }
        }
    }
}
