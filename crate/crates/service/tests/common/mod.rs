#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use claimforge::dataset::{build_records, Direction, RecordFormat, Vocabulary};
use claimforge::generate::ModelSet;
use claimforge::nn::TrainConfig;
use claimforge::synth::{synth_patents, synthetic_sections};
use claimforge::toy::{desk_config, train_decoder};
use claimforge_service::{router, AppState, LoadedModels, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// Forward and backward decoders trained briefly on synthetic claims.
pub fn toy_models() -> &'static ModelSet {
    static MODELS: OnceLock<ModelSet> = OnceLock::new();
    MODELS.get_or_init(|| {
        let mut patents = Vec::new();
        for (i, s) in synthetic_sections().into_iter().enumerate() {
            patents.extend(synth_patents(&BTreeSet::from([s]), 40, &s.to_string(), i as u64));
        }
        let records = build_records(&patents, RecordFormat::DependentAlone).unwrap();
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let vocab = Vocabulary::train(&texts, 500).unwrap();
        let tc = TrainConfig { learning_rate: 5e-3, batch_size: 8, max_steps: 200, seed: 2, ..Default::default() };
        let cfg = desk_config(vocab.len(), 5);
        let (fwd, _) = train_decoder(&records, &vocab, Direction::Forward, cfg, &tc).unwrap();
        let (bwd, _) = train_decoder(&records, &vocab, Direction::Backward, cfg, &tc).unwrap();
        ModelSet::new(Arc::new(vocab)).with_forward(fwd).with_backward(bwd)
    })
}

pub fn state_with(config: ServiceConfig, models: LoadedModels) -> Arc<AppState> {
    Arc::new(AppState::new(config, models).unwrap())
}

pub fn toy_state() -> Arc<AppState> {
    state_with(ServiceConfig::default(), LoadedModels::from_set(toy_models().clone()))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

pub async fn new_session(app: &Router) -> String {
    let (status, v) = json(app, "POST", "/v1/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

pub fn app(state: Arc<AppState>) -> Router {
    router(state)
}
