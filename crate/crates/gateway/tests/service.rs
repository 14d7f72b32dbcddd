mod common;

use common::{chat_service, client, config, post_chat, simulator};
use serde_json::json;

#[tokio::test]
async fn chat_runs_the_transaction() {
    let (sim, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    let (status, body) = post_chat(&base, &json!({"message": "I'm leaving the office"}).to_string()).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["decision"]["status"], "accepted");
    assert_eq!(body["decision"]["api_id"], "leave_office");
    assert_eq!(body["report"]["overall"], "success");
    assert_eq!(body["trace"].as_array().unwrap().len(), 6);
    assert_eq!(sim.log().len(), 3);
}

#[tokio::test]
async fn off_topic_chat_is_rejected_without_side_effects() {
    let (sim, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    let (status, body) = post_chat(&base, r#"{"message": "what is the capital of France"}"#).await;
    assert_eq!(status, 200);
    assert_eq!(body["decision"]["status"], "rejected");
    assert!(body["decision"].get("api_id").is_none());
    assert!(body.get("report").is_none());
    assert_eq!(body["trace"].as_array().unwrap().len(), 3);
    assert!(sim.log().is_empty());
}

#[tokio::test]
async fn bad_requests() {
    let (_, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    let (status, body) = post_chat(&base, "{not json").await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["kind"], "bad_request");
    let (status, _) = post_chat(&base, r#"{"text": "hi"}"#).await;
    assert_eq!(status, 400);
    let (status, body) = post_chat(&base, r#"{"message": "   "}"#).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["kind"], "empty_text");
}

#[tokio::test]
async fn dry_run_touches_nothing() {
    let (sim, backend) = simulator().await;
    let mut cfg = config(backend);
    cfg.dry_run = true;
    let base = chat_service(&cfg).await;
    let (status, body) = post_chat(&base, r#"{"message": "I'm leaving the office"}"#).await;
    assert_eq!(status, 200);
    assert_eq!(body["decision"]["api_id"], "leave_office");
    assert!(body.get("report").is_none());
    assert_eq!(body["trace"].as_array().unwrap().len(), 6);
    assert!(sim.log().is_empty());
}

#[tokio::test]
async fn health_and_catalogue() {
    let (_, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    let get = |p: &str| client().get(format!("{base}{p}")).send();
    let health: serde_json::Value =
        serde_json::from_str(&get("/healthz").await.unwrap().text().await.unwrap()).unwrap();
    assert_eq!(health, json!({"status": "ok", "exemplars": 34, "apis": 7}));
    let apis: serde_json::Value =
        serde_json::from_str(&get("/apis").await.unwrap().text().await.unwrap()).unwrap();
    assert_eq!(apis[0]["api_id"], "leave_office");
    let ex: serde_json::Value =
        serde_json::from_str(&get("/exemplars").await.unwrap().text().await.unwrap()).unwrap();
    assert_eq!(ex.as_array().unwrap().len(), 34);
    assert!(ex[0].get("embedding").is_none());
}

#[tokio::test]
async fn state_is_relayed_from_the_backend() {
    let (_, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    post_chat(&base, r#"{"message": "I'm leaving the office"}"#).await;
    let r = client().get(format!("{base}/state")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let state: serde_json::Value = serde_json::from_str(&r.text().await.unwrap()).unwrap();
    assert_eq!(state["elevator"]["last_operation"], "3fdown");
}

#[tokio::test]
async fn state_reports_unreachable_backend() {
    let dead = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let base = chat_service(&config(dead)).await;
    let r = client().get(format!("{base}/state")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 502);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let (_, backend) = simulator().await;
    let base = chat_service(&config(backend)).await;
    let r = client()
        .request(reqwest::Method::OPTIONS, format!("{base}/chat"))
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type")
        .send()
        .await
        .unwrap();
    assert!(r.status().is_success());
    assert_eq!(r.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn cors_origin_list_is_honoured() {
    let (_, backend) = simulator().await;
    let mut cfg = config(backend);
    cfg.cors_origins = vec!["http://ui.local".into()];
    let base = chat_service(&cfg).await;
    let r = client()
        .get(format!("{base}/healthz"))
        .header("origin", "http://ui.local")
        .send()
        .await
        .unwrap();
    assert_eq!(r.headers()["access-control-allow-origin"], "http://ui.local");
    let r = client()
        .get(format!("{base}/healthz"))
        .header("origin", "http://evil.example")
        .send()
        .await
        .unwrap();
    assert!(r.headers().get("access-control-allow-origin").is_none());
}
