mod common;

use axum::http::StatusCode;
use chrono::{Duration, Utc};
use claimforge_service::{LoadedModels, ServiceConfig};
use common::*;
use serde_json::json;

fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig { store_path: Some(dir.join("journal.jsonl")), compact_every: 3, ..Default::default() }
}

async fn session_with_feedback(app: &axum::Router) -> (String, String) {
    let s = new_session(app).await;
    let body = json!({ "session_id": s, "context": "A lamp comprising:", "direction": "forward", "extent": "phrase", "k": 2 });
    let (status, v) = json(app, "POST", "/v1/complete", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let cid = v["candidates"][0]["candidate_id"].as_str().unwrap().to_string();
    let fb = json!({ "session_id": s, "candidate_id": cid, "action": "Rejected" });
    assert_eq!(call(app, "POST", "/v1/feedback", Some(fb)).await.0, StatusCode::NO_CONTENT);
    (s, cid)
}

#[tokio::test]
async fn restart_restores_sessions_and_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let models = || LoadedModels::from_set(toy_models().clone());
    let (s, cid, before) = {
        let app = app(state_with(config(dir.path()), models()));
        let (s, cid) = session_with_feedback(&app).await;
        let (_, before) = json(&app, "GET", &format!("/v1/sessions/{s}"), None).await;
        (s, cid, before)
    };
    let app = app(state_with(config(dir.path()), models()));
    let (status, after) = json(&app, "GET", &format!("/v1/sessions/{s}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    let (_, export) = call(&app, "GET", "/v1/annotations", None).await;
    assert_eq!(export.lines().count(), 1);
    // The restored candidate still accepts feedback.
    let fb = json!({ "session_id": s, "candidate_id": cid, "action": "Accepted" });
    assert_eq!(call(&app, "POST", "/v1/feedback", Some(fb)).await.0, StatusCode::NO_CONTENT);
    // A new session after restart does not collide with restored sequence numbers.
    let (s2, _) = session_with_feedback(&app).await;
    assert_ne!(s2, s);
    let (_, export) = call(&app, "GET", "/v1/annotations", None).await;
    let seqs: Vec<u64> = export.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs.len(), 3);
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}

#[tokio::test]
async fn expired_sessions_vanish_but_annotations_remain() {
    let dir = tempfile::tempdir().unwrap();
    let models = || LoadedModels::from_set(toy_models().clone());
    let state = state_with(config(dir.path()), models());
    let app = app(state.clone());
    let (s, cid) = session_with_feedback(&app).await;
    assert_eq!(state.expire_idle(Utc::now() + Duration::hours(1)).unwrap(), 0);
    assert_eq!(state.expire_idle(Utc::now() + Duration::hours(25)).unwrap(), 1);
    assert_eq!(json(&app, "GET", &format!("/v1/sessions/{s}"), None).await.0, StatusCode::NOT_FOUND);
    let fb = json!({ "session_id": s, "candidate_id": cid, "action": "Accepted" });
    assert_eq!(call(&app, "POST", "/v1/feedback", Some(fb)).await.0, StatusCode::NOT_FOUND);
    drop(app);
    drop(state);

    let app = common::app(state_with(config(dir.path()), models()));
    assert_eq!(json(&app, "GET", &format!("/v1/sessions/{s}"), None).await.0, StatusCode::NOT_FOUND);
    let (_, export) = call(&app, "GET", "/v1/annotations", None).await;
    assert_eq!(export.lines().count(), 1);
    let journal = std::fs::read_to_string(dir.path().join("journal.jsonl")).unwrap();
    assert!(!journal.contains("session_created"), "compaction drops expired sessions");
}

#[tokio::test]
async fn zero_ttl_expires_on_access() {
    let cfg = ServiceConfig { session_ttl_secs: 0, ..Default::default() };
    let app = app(state_with(cfg, LoadedModels::from_set(toy_models().clone())));
    let s = new_session(&app).await;
    std::thread::sleep(std::time::Duration::from_millis(5));
    assert_eq!(json(&app, "GET", &format!("/v1/sessions/{s}"), None).await.0, StatusCode::NOT_FOUND);
}
