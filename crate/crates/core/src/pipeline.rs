//! The six-step control flow: receive, embed, gate, classify, look up,
//! execute.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{error, info, warn};
use url::Url;

use crate::classifier::{self, CentroidModel, ClassifierError, IntentDecision};
use crate::dispatch::{Executor, TransactionReport, DEFAULT_CALL_TIMEOUT};
use crate::embedding::{EmbeddingError, EmbeddingProvider, ProviderConfig};
use crate::index::{load_exemplar_texts, IndexError, VectorIndex};
use crate::registry::{Registry, RegistryError};

/// Gate threshold used with the shipped fixtures and the local hash embedder.
pub const FIXTURE_TAU: f64 = 0.45;
/// Gate threshold suggested for hosted embedding models.
pub const DEFAULT_REMOTE_TAU: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    pub tau: f64,
    /// Either an index snapshot or a plain exemplar list (embedded at startup).
    pub exemplars_path: PathBuf,
    pub registry_path: PathBuf,
    pub listen_address: String,
    pub dry_run: bool,
    /// When set, every registry endpoint is re-pointed at this origin.
    pub backend_base_url: Option<String>,
    pub call_timeout_ms: u64,
    /// Allowed browser origins for the chat endpoint; empty means any.
    pub cors_origins: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::default(),
            tau: FIXTURE_TAU,
            exemplars_path: PathBuf::from("fixtures/index.json"),
            registry_path: PathBuf::from("fixtures/registry.json"),
            listen_address: "127.0.0.1:8080".into(),
            dry_run: false,
            backend_base_url: None,
            call_timeout_ms: DEFAULT_CALL_TIMEOUT.as_millis() as u64,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.exemplars_path, &mut cfg.registry_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        classifier::check_threshold(self.tau).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, p) in [
            ("exemplars_path", &self.exemplars_path),
            ("registry_path", &self.registry_path),
        ] {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!(
                    "{name} {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(base) = &self.backend_base_url {
            Url::parse(base).map_err(|e| ConfigError::Invalid(format!("backend_base_url {base:?}: {e}")))?;
        }
        if self.call_timeout_ms == 0 {
            return Err(ConfigError::Invalid("call_timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn call_timeout(&self) -> Duration {
        Duration::from_millis(self.call_timeout_ms)
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("embedding provider: {0}")]
    Provider(#[from] EmbeddingError),
    #[error("exemplars: {0}")]
    Exemplars(#[from] IndexError),
    #[error("classifier: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("registry: {0}")]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u8,
    pub name: String,
    pub duration_ms: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResponse {
    pub decision: IntentDecision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<TransactionReport>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("message is empty")]
    EmptyText,
    #[error("embedding provider error: {0}")]
    EmbeddingProvider(EmbeddingError),
    #[error("internal misconfiguration: {0}")]
    InternalMisconfiguration(String),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::EmptyText => "empty_text",
            PipelineError::EmbeddingProvider(_) => "embedding_provider_error",
            PipelineError::InternalMisconfiguration(_) => "internal_misconfiguration",
        }
    }

    /// HTTP status the chat endpoint answers with.
    pub fn http_status(&self) -> u16 {
        match self {
            PipelineError::EmptyText => 400,
            PipelineError::EmbeddingProvider(_) => 502,
            PipelineError::InternalMisconfiguration(_) => 500,
        }
    }
}

/// A failed run together with the steps that did complete.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub trace: Vec<TraceStep>,
}

/// Loaded, read-only pipeline state shared across requests.
#[derive(Debug)]
pub struct Pipeline {
    provider: Arc<dyn EmbeddingProvider>,
    index: VectorIndex,
    model: CentroidModel,
    registry: Registry,
    executor: Executor,
    tau: f64,
    dry_run: bool,
}

impl Pipeline {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        index: VectorIndex,
        registry: Registry,
        executor: Executor,
        tau: f64,
    ) -> Result<Self, StartupError> {
        classifier::check_threshold(tau)?;
        let model = CentroidModel::train(index.list())?;
        if let (Some(p), Some(i)) = (provider.dim(), index.dim()) {
            if p != i {
                return Err(StartupError::Exemplars(IndexError::DimensionMismatch {
                    expected: i,
                    actual: p,
                }));
            }
        }
        let unregistered: Vec<&str> = model.class_ids().filter(|c| !registry.contains(c)).collect();
        if !unregistered.is_empty() {
            warn!(?unregistered, "classifier classes without a registry entry");
        }
        Ok(Self {
            provider,
            index,
            model,
            registry,
            executor,
            tau,
            dry_run: false,
        })
    }

    pub fn with_dry_run(mut self, dry_run: bool) -> Self {
        self.dry_run = dry_run;
        self
    }

    pub async fn from_config(config: &PipelineConfig) -> Result<Self, StartupError> {
        config.validate()?;
        let provider = config.provider.build()?;
        let index = load_index(&config.exemplars_path, provider.as_ref()).await?;
        let mut registry = Registry::load(&config.registry_path)?;
        if let Some(base) = &config.backend_base_url {
            let base = Url::parse(base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            registry.rebase(&base)?;
        }
        let executor = Executor::new(config.call_timeout());
        Ok(Self::new(provider, index, registry, executor, config.tau)?.with_dry_run(config.dry_run))
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn model(&self) -> &CentroidModel {
        &self.model
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dry_run(&self) -> bool {
        self.dry_run
    }

    pub async fn handle_message(&self, text: &str) -> Result<PipelineResponse, PipelineFailure> {
        let mut trace = Trace::default();

        // 1. receive
        let t = Instant::now();
        if text.trim().is_empty() {
            trace.push(1, "receive", t, "empty message".into());
            return Err(trace.fail(PipelineError::EmptyText));
        }
        trace.push(1, "receive", t, format!("{} characters", text.chars().count()));

        // 2. embed
        let t = Instant::now();
        let query = match self.provider.embed_text(text).await {
            Ok(q) => q,
            Err(EmbeddingError::EmptyText) => return Err(trace.fail(PipelineError::EmptyText)),
            Err(e) => {
                error!(error = %e, "embedding failed");
                return Err(trace.fail(PipelineError::EmbeddingProvider(e)));
            }
        };
        trace.push(
            2,
            "embed",
            t,
            format!("{} -> dim {}", self.provider.describe(), query.dim()),
        );

        // 3. gate (classification scores are computed alongside for diagnostics)
        let t = Instant::now();
        let decision = classifier::decide(&self.index, &self.model, &query, self.tau)
            .map_err(|e| trace.fail_ref(PipelineError::InternalMisconfiguration(e.to_string())))?;
        let verdict = if decision.is_accepted() { "pass" } else { "reject" };
        trace.push_with(
            3,
            "gate",
            t,
            format!(
                "nearest exemplar {} ({}) similarity {:.4} vs tau {}: {verdict}",
                decision.matched_exemplar.record_id,
                decision.matched_exemplar.api_id,
                decision.gate_similarity,
                self.tau
            ),
            StepFields {
                gate_similarity: Some(decision.gate_similarity),
                outcome: Some(verdict),
                ..Default::default()
            },
        );
        let Some(api_id) = decision.api_id.clone() else {
            return Ok(PipelineResponse {
                decision,
                report: None,
                trace: trace.steps,
            });
        };

        // 4. classify
        let t = Instant::now();
        let score = decision.class_scores.get(&api_id).copied().unwrap_or_default();
        trace.push_with(
            4,
            "classify",
            t,
            format!("api_id {api_id} score {score:.4}"),
            StepFields {
                api_id: Some(&api_id),
                ..Default::default()
            },
        );

        // 5. look up
        let t = Instant::now();
        let metadata = match self.registry.get(&api_id) {
            Ok(m) => m,
            Err(e) => {
                error!(api_id = %api_id, "classifier produced an api_id with no registry entry");
                return Err(trace.fail(PipelineError::InternalMisconfiguration(e.to_string())));
            }
        };
        trace.push(
            5,
            "lookup",
            t,
            format!("{api_id}: {} call(s)", metadata.transaction.len()),
        );

        // 6. execute
        let t = Instant::now();
        let calls = metadata
            .transaction
            .iter()
            .map(|c| format!("{} {}", c.method, c.endpoint))
            .collect::<Vec<_>>()
            .join(", ");
        let report = if self.dry_run {
            None
        } else {
            Some(self.executor.execute_transaction(metadata).await)
        };
        let outcome = match &report {
            None => "dry_run".to_owned(),
            Some(r) => format!("{}/{} succeeded", r.succeeded(), r.results.len()),
        };
        trace.push_with(
            6,
            "execute",
            t,
            calls,
            StepFields {
                api_id: Some(&api_id),
                outcome: Some(&outcome),
                ..Default::default()
            },
        );
        Ok(PipelineResponse {
            decision,
            report,
            trace: trace.steps,
        })
    }
}

/// Loads a snapshot, or embeds a plain exemplar list when given one.
pub async fn load_index(path: &Path, provider: &dyn EmbeddingProvider) -> Result<VectorIndex, IndexError> {
    let text = std::fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.trim_start().starts_with('[') {
        let exemplars = load_exemplar_texts(path)?;
        VectorIndex::build(&exemplars, provider).await
    } else {
        VectorIndex::load(path)
    }
}

#[derive(Default)]
struct StepFields<'a> {
    gate_similarity: Option<f64>,
    api_id: Option<&'a str>,
    outcome: Option<&'a str>,
}

#[derive(Default)]
struct Trace {
    steps: Vec<TraceStep>,
}

impl Trace {
    fn push(&mut self, step: u8, name: &str, started: Instant, summary: String) {
        self.push_with(step, name, started, summary, StepFields::default());
    }

    fn push_with(&mut self, step: u8, name: &str, started: Instant, summary: String, f: StepFields<'_>) {
        let duration_ms = started.elapsed().as_secs_f64() * 1e3;
        info!(
            step,
            name,
            duration_ms,
            summary = %summary,
            gate_similarity = f.gate_similarity,
            api_id = f.api_id,
            outcome = f.outcome,
            "pipeline step"
        );
        self.steps.push(TraceStep {
            step,
            name: name.to_owned(),
            duration_ms,
            summary,
        });
    }

    fn fail(self, error: PipelineError) -> PipelineFailure {
        PipelineFailure {
            error,
            trace: self.steps,
        }
    }

    fn fail_ref(&self, error: PipelineError) -> PipelineFailure {
        PipelineFailure {
            error,
            trace: self.steps.clone(),
        }
    }
}
