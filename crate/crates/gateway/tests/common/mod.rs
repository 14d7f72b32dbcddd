#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use spacegate::service::{self, AppState};
use spacegate_core::pipeline::{Pipeline, PipelineConfig};
use spacegate_sim::Simulator;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PathBuf {
    repo_root().join("fixtures").join(name)
}

/// Shipped fixtures, with the registry pointed at `backend`.
pub fn config(backend: SocketAddr) -> PipelineConfig {
    PipelineConfig {
        exemplars_path: fixture("index.json"),
        registry_path: fixture("registry.json"),
        backend_base_url: Some(format!("http://{backend}")),
        ..PipelineConfig::default()
    }
}

pub async fn simulator() -> (Simulator, SocketAddr) {
    let sim = Simulator::new();
    let (addr, _) = spacegate_sim::spawn(sim.clone(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    (sim, addr)
}

/// Starts the chat service on an ephemeral port; returns its base URL.
pub async fn chat_service(cfg: &PipelineConfig) -> String {
    let pipeline = Arc::new(Pipeline::from_config(cfg).await.unwrap());
    let backend = cfg.backend_base_url.as_deref().map(|b| b.parse().unwrap());
    let app = service::router(AppState::new(pipeline, backend), &cfg.cors_origins);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(service::serve(listener, app, std::future::pending()));
    format!("http://{addr}")
}

pub fn client() -> reqwest::Client {
    reqwest::Client::builder().no_proxy().build().unwrap()
}

pub async fn post_chat(base: &str, body: &str) -> (u16, serde_json::Value) {
    let r = client()
        .post(format!("{base}/chat"))
        .header("content-type", "application/json")
        .body(body.to_owned())
        .send()
        .await
        .unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_str(&r.text().await.unwrap()).unwrap())
}
