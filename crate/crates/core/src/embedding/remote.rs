//! Client for hosted embedding APIs speaking
//! `POST {base}/embeddings {"model", "input": [..]} -> {"data": [{"embedding": [..]}]}`.

use std::sync::OnceLock;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use tracing::warn;

use super::{require_text, EmbeddingError, EmbeddingProvider, EmbeddingVector, ProviderConfig};

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub struct RemoteEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    configured_dim: Option<usize>,
    learned_dim: OnceLock<usize>,
    max_retries: u32,
    retry_base: Duration,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "[REDACTED]"))
            .field("dim", &self.dim())
            .finish()
    }
}

impl RemoteEmbedder {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, EmbeddingError> {
        let base = config.remote_base_url.trim_end_matches('/');
        url::Url::parse(base)
            .map_err(|e| EmbeddingError::Config(format!("remote_base_url {base:?}: {e}")))?;
        if config.remote_model_name.is_empty() {
            return Err(EmbeddingError::Config("remote_model_name is empty".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| EmbeddingError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env_name)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(Self {
            client,
            endpoint: format!("{base}/embeddings"),
            model: config.remote_model_name.clone(),
            api_key,
            configured_dim: config.dim,
            learned_dim: OnceLock::new(),
            max_retries: config.max_retries,
            retry_base: Duration::from_millis(config.retry_base_ms),
        })
    }

    async fn request(&self, texts: &[String]) -> Result<EmbeddingsResponse, EmbeddingError> {
        let payload = serde_json::json!({ "model": self.model, "input": texts });
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut req = self.client.post(&self.endpoint).json(&payload);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let retryable = match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.text().await.unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&body)
                            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()));
                    }
                    if !status.is_server_error() {
                        return Err(EmbeddingError::ProviderRejected {
                            status: status.as_u16(),
                            body,
                        });
                    }
                    format!("HTTP {}: {}", status.as_u16(), body)
                }
                Err(e) if e.is_timeout() || e.is_connect() => e.to_string(),
                Err(e) => {
                    return Err(EmbeddingError::ProviderUnreachable {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            };
            if attempt > self.max_retries {
                return Err(EmbeddingError::ProviderUnreachable {
                    attempts: attempt,
                    message: retryable,
                });
            }
            let delay = self.retry_base * 2u32.saturating_pow(attempt - 1);
            warn!(attempt, ?delay, error = %retryable, "embedding request failed, retrying");
            tokio::time::sleep(delay).await;
        }
    }

    fn check_dim(&self, actual: usize) -> Result<(), EmbeddingError> {
        if let Some(expected) = self.configured_dim {
            if expected != actual {
                return Err(EmbeddingError::DimensionMismatch { expected, actual });
            }
        }
        let expected = *self.learned_dim.get_or_init(|| actual);
        if expected != actual {
            return Err(EmbeddingError::DimensionMismatch { expected, actual });
        }
        Ok(())
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        self.configured_dim.or_else(|| self.learned_dim.get().copied())
    }

    fn describe(&self) -> String {
        format!("remote({}, model={})", self.endpoint, self.model)
    }

    async fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text.to_owned()]).await.map_err(|e| match e {
            EmbeddingError::Batch { source, .. } => *source,
            other => other,
        })?;
        Ok(out.remove(0))
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        for (index, text) in texts.iter().enumerate() {
            require_text(text).map_err(|e| EmbeddingError::Batch {
                index,
                source: Box::new(e),
            })?;
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut resp = self.request(texts).await?;
        if resp.data.len() != texts.len() {
            return Err(EmbeddingError::MalformedResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        if resp.data.iter().all(|d| d.index.is_some()) {
            resp.data.sort_by_key(|d| d.index);
        }
        resp.data
            .into_iter()
            .enumerate()
            .map(|(index, datum)| {
                self.check_dim(datum.embedding.len())
                    .and_then(|_| EmbeddingVector::normalized(datum.embedding))
                    .map_err(|e| EmbeddingError::Batch {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}
