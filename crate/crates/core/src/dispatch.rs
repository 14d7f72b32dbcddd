//! Executes API metadata as HTTP requests.
//!
//! Calls in a transaction run strictly in order. The first failure stops the
//! transaction and every later call is reported as skipped. Nothing is
//! retried and nothing is rolled back.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::registry::{ApiCall, ApiMetadata, HttpMethod};

pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_millis(5_000);
/// Response bodies longer than this are cut at a char boundary.
pub const MAX_RESPONSE_BODY: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Success,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallResult {
    pub call_index: usize,
    pub status: CallStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http_status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_body: Option<String>,
    pub latency_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CallResult {
    fn skipped(call_index: usize) -> Self {
        Self {
            call_index,
            status: CallStatus::Skipped,
            http_status: None,
            response_body: None,
            latency_ms: 0.0,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Success,
    PartialFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionReport {
    pub api_id: String,
    pub results: Vec<CallResult>,
    pub overall: Overall,
}

impl TransactionReport {
    pub fn succeeded(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.status == CallStatus::Success)
            .count()
    }
}

/// Shared HTTP client for building APIs. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Executor {
    client: reqwest::Client,
    timeout: Duration,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(DEFAULT_CALL_TIMEOUT)
    }
}

impl Executor {
    pub fn new(timeout: Duration) -> Self {
        // Building APIs live on the local network; environment proxies are
        // ignored.
        let client = reqwest::Client::builder()
            .no_proxy()
            .build()
            .expect("HTTP client builds");
        Self { client, timeout }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Sends exactly one request. All failures are encoded in the result.
    pub async fn execute_call(&self, call_index: usize, call: &ApiCall) -> CallResult {
        let started = Instant::now();
        let failed = |error: String, http_status: Option<u16>, body: Option<String>| CallResult {
            call_index,
            status: CallStatus::Failed,
            http_status,
            response_body: body,
            latency_ms: elapsed_ms(started),
            error: Some(error),
        };
        let method = match call.http_method() {
            Ok(m) => m,
            Err(e) => return failed(e, None, None),
        };
        let mut req = self
            .client
            .request(to_reqwest(method), &call.endpoint)
            .timeout(self.timeout);
        if !call.body.is_empty() {
            req = req
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(call.body.clone());
        }
        debug!(%method, endpoint = %call.endpoint, "dispatching call");
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => {
                warn!(endpoint = %call.endpoint, error = %error_chain(&e), "call failed");
                return failed(error_chain(&e), None, None);
            }
        };
        let status = resp.status();
        let body = match resp.text().await {
            Ok(b) => truncate(b),
            Err(e) => return failed(error_chain(&e), Some(status.as_u16()), None),
        };
        if status.is_success() {
            CallResult {
                call_index,
                status: CallStatus::Success,
                http_status: Some(status.as_u16()),
                response_body: Some(body),
                latency_ms: elapsed_ms(started),
                error: None,
            }
        } else {
            failed(
                format!("HTTP {}", status.as_u16()),
                Some(status.as_u16()),
                Some(body),
            )
        }
    }

    pub async fn execute_transaction(&self, metadata: &ApiMetadata) -> TransactionReport {
        let mut results = Vec::with_capacity(metadata.transaction.len());
        let mut stopped = false;
        for (i, call) in metadata.transaction.iter().enumerate() {
            if stopped {
                results.push(CallResult::skipped(i));
                continue;
            }
            let r = self.execute_call(i, call).await;
            stopped = r.status != CallStatus::Success;
            results.push(r);
        }
        let overall = if results.iter().all(|r| r.status == CallStatus::Success) {
            Overall::Success
        } else {
            Overall::PartialFailure
        };
        TransactionReport {
            api_id: metadata.api_id.clone(),
            results,
            overall,
        }
    }
}

fn to_reqwest(m: HttpMethod) -> reqwest::Method {
    match m {
        HttpMethod::Get => reqwest::Method::GET,
        HttpMethod::Put => reqwest::Method::PUT,
        HttpMethod::Post => reqwest::Method::POST,
        HttpMethod::Delete => reqwest::Method::DELETE,
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn truncate(mut body: String) -> String {
    if body.len() > MAX_RESPONSE_BODY {
        let mut cut = MAX_RESPONSE_BODY;
        while !body.is_char_boundary(cut) {
            cut -= 1;
        }
        body.truncate(cut);
    }
    body
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    msg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncate_respects_char_boundaries() {
        let s = "é".repeat(MAX_RESPONSE_BODY);
        let t = truncate(s);
        assert!(t.len() <= MAX_RESPONSE_BODY);
        assert!(t.len() >= MAX_RESPONSE_BODY - 1);
        assert_eq!(truncate("short".into()), "short");
    }

    #[tokio::test]
    async fn invalid_method_fails_without_request() {
        let call = ApiCall {
            method: "FETCH".into(),
            endpoint: "http://127.0.0.1:9/x".into(),
            body: String::new(),
        };
        let r = Executor::default().execute_call(0, &call).await;
        assert_eq!(r.status, CallStatus::Failed);
        assert!(r.http_status.is_none());
    }
}
