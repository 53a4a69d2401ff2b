#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use geomatch::boosting::{InteractionRule, TrainConfig, TuningGrid};
use geomatch::data::GeneratorConfig;
use geomatch::preferences::MnlConfig;
use geomatch::recommender::OutcomeOptions;
use geomatch_service::api::{router, AppState, ServiceConfig};
use geomatch_service::manifest::PipelineManifest;
use geomatch_service::pipeline;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn tiny_grid() -> TuningGrid {
    TuningGrid {
        interaction_depths: vec![2],
        learning_rates: vec![0.1],
        bag_fractions: vec![0.5],
        initial_max_trees: 40,
        extension_step: 20,
        proximity_threshold: 5,
        interaction_rule: InteractionRule::Depth,
        min_node: 10,
        folds: 3,
    }
}

/// Generate, train and predict into `dir`.
pub fn build_workspace(dir: &Path, n: usize, k: usize, seed: u64) -> PipelineManifest {
    let mut m = PipelineManifest::new(dir, seed);
    pipeline::generate(&mut m, &GeneratorConfig { n, k, seed, ..Default::default() }).unwrap();
    let config = TrainConfig { grid: tiny_grid(), min_rows: 30, seed, ..Default::default() };
    pipeline::train(&mut m, &config, &MnlConfig::default()).unwrap();
    pipeline::predict(&mut m, &OutcomeOptions::default()).unwrap();
    m
}

pub fn state(m: &PipelineManifest, config: ServiceConfig) -> Arc<AppState> {
    Arc::new(AppState::from_manifest(m, config).unwrap())
}

pub async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, _, json) = call_with(state, method, uri, body, None).await;
    (status, json)
}

pub async fn call_with(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, axum::http::HeaderMap, Value) {
    let mut req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}
