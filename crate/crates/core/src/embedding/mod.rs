//! Text embeddings and the cosine metric used by every downstream stage.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a deterministic local hash
//! embedder (offline, used by the fixtures and tests) and a client for the
//! de-facto `POST /embeddings` HTTP shape served by hosted embedding APIs.

mod local;
mod remote;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::{fnv1a64, local_hash_embed, tokenize, LocalHashEmbedder, MIN_LOCAL_DIM};
pub use remote::RemoteEmbedder;

/// Default dimension of the local hash embedder.
pub const DEFAULT_LOCAL_DIM: usize = 256;
/// Environment variable consulted for the remote API key unless overridden.
pub const DEFAULT_API_KEY_ENV: &str = "EMBEDDINGS_API_KEY";

/// Tolerance for the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text is empty")]
    EmptyText,
    #[error("embedding is the zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid dimension {0} (local hash embedder needs at least {MIN_LOCAL_DIM})")]
    InvalidDimension(usize),
    #[error("embedding provider unreachable after {attempts} attempt(s): {message}")]
    ProviderUnreachable { attempts: u32, message: String },
    #[error("embedding provider rejected the request with HTTP {status}: {body}")]
    ProviderRejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("item {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
}

impl EmbeddingError {
    /// The per-item error, looking through a [`EmbeddingError::Batch`] wrapper.
    pub fn root(&self) -> &EmbeddingError {
        match self {
            EmbeddingError::Batch { source, .. } => source.root(),
            other => other,
        }
    }
}

/// A unit-length dense vector.
///
/// Construct with [`EmbeddingVector::normalized`], which rejects non-finite
/// and zero inputs, or [`EmbeddingVector::from_unit`] for values already known
/// to be normalized (e.g. a loaded snapshot).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        check_finite(&values)?;
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|x| x / norm).collect()))
    }

    /// Wraps values that should already have unit norm, checking finiteness
    /// and the norm tolerance.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        check_finite(&values)?;
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbeddingError::MalformedResponse(format!(
                "expected a unit vector, norm is {norm}"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        EmbeddingVector::from_unit(values).map_err(serde::de::Error::custom)
    }
}

fn check_finite(values: &[f64]) -> Result<(), EmbeddingError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(EmbeddingError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Cosine similarity of two raw vectors, clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|^2 |b|^2)`, so a vector compared with itself
/// scores exactly `1.0`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine(a.values(), b.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    LocalHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub remote_base_url: String,
    pub remote_model_name: String,
    pub api_key_env_name: String,
    /// Required for `local_hash`; for `remote`, checked against the response
    /// when set.
    pub dim: Option<usize>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::LocalHash,
            remote_base_url: "https://api.openai.com/v1".to_string(),
            remote_model_name: "text-embedding-3-small".to_string(),
            api_key_env_name: DEFAULT_API_KEY_ENV.to_string(),
            dim: Some(DEFAULT_LOCAL_DIM),
            timeout_ms: 10_000,
            max_retries: 3,
            retry_base_ms: 200,
        }
    }
}

impl ProviderConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            kind: ProviderKind::LocalHash,
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn remote(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            remote_base_url: base_url.into(),
            remote_model_name: model.into(),
            dim: None,
            ..Self::default()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Builds the provider this configuration describes.
    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>, EmbeddingError> {
        match self.kind {
            ProviderKind::LocalHash => {
                let dim = self.dim.ok_or_else(|| {
                    EmbeddingError::Config("local_hash provider requires an explicit dim".into())
                })?;
                Ok(Arc::new(LocalHashEmbedder::new(dim)?))
            }
            ProviderKind::Remote => Ok(Arc::new(RemoteEmbedder::from_config(self)?)),
        }
    }
}

/// Something that turns text into unit vectors of a fixed dimension.
#[async_trait]
pub trait EmbeddingProvider: Send + Sync + std::fmt::Debug {
    /// The dimension, once known. Remote providers learn it from the first
    /// response unless configured.
    fn dim(&self) -> Option<usize>;

    /// Short human-readable provider name for logs.
    fn describe(&self) -> String;

    async fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    /// Embeds every text, preserving order. The default embeds one at a time.
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for (index, text) in texts.iter().enumerate() {
            let v = self.embed_text(text).await.map_err(|e| EmbeddingError::Batch {
                index,
                source: Box::new(e),
            })?;
            out.push(v);
        }
        Ok(out)
    }
}

/// Precondition shared by all providers.
pub(crate) fn require_text(text: &str) -> Result<(), EmbeddingError> {
    if text.trim().is_empty() {
        Err(EmbeddingError::EmptyText)
    } else {
        Ok(())
    }
}
