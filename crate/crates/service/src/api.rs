//! HTTP+JSON interface: predictions, recommendations over a user's
//! acceptable set, and bounded backtest runs.
//!
//! Every response carries the served model hash, in the `model_hash` body
//! field and the `x-model-hash` header.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use geomatch::backtest::{simulate, BacktestInputs, ComplianceMode, SimulationConfig, SimulationSummary};
use geomatch::boosting::ModelSet;
use geomatch::data::{CovariateVector, Location, LocationId, Schema};
use geomatch::preferences::{acceptable_set, rank_locations, ranking_seed, MultinomialLogitModel, Phi};
use geomatch::recommender::{
    modeled_locations, predict_row, recommend, rents_from_locations, OutcomeMode, OutcomeOptions, PredictionMatrix,
    PredictionRow, RentTable,
};
use geomatch::seed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokio::sync::Semaphore;

use crate::pipeline::{build_matrix, Cohort};

/// Shown with every recommendation list.
pub const TRANSPARENCY_NOTE: &str = "These locations are ranked by a single goal: the highest predicted \
employment income in the first full year after arrival. The predictions are statistical estimates learned \
from earlier arrivals with similar profiles; they do not account for family ties, community, cost of \
living, or personal preferences, and they are not a guarantee of any outcome.";

pub const MODEL_HASH_HEADER: &str = "x-model-hash";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest `n_runs` accepted by `/simulate`.
    pub max_sim_runs: usize,
    /// Concurrent `/simulate` jobs.
    pub sim_workers: usize,
    /// When set, every route except `/health` requires this bearer token.
    pub bearer_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { max_sim_runs: 20, sim_workers: 2, bearer_token: None }
    }
}

/// Immutable model state plus the optional backtest cohort.
pub struct AppState {
    pub schema: Schema,
    pub locations: Vec<Location>,
    pub models: ModelSet,
    pub mnl: Option<MultinomialLogitModel>,
    pub model_hash: String,
    pub root_seed: u64,
    pub config: ServiceConfig,
    modeled: Vec<Location>,
    rents: RentTable,
    cohort: Option<CohortState>,
    sim_slots: Semaphore,
}

struct CohortState {
    cohort: Cohort,
    /// Matrices for outcome modes other than the stored one, built on demand.
    extra: Mutex<HashMap<OutcomeMode, Arc<PredictionMatrix>>>,
}

impl AppState {
    pub fn new(
        schema: Schema,
        locations: Vec<Location>,
        models: ModelSet,
        mnl: Option<MultinomialLogitModel>,
        model_hash: String,
        root_seed: u64,
        cohort: Option<Cohort>,
        config: ServiceConfig,
    ) -> geomatch::Result<Self> {
        crate::pipeline::check_model_schema(&schema, &models)?;
        let modeled = modeled_locations(&models, &locations)?.into_iter().cloned().collect();
        let rents = rents_from_locations(&locations);
        Ok(AppState {
            schema,
            locations,
            models,
            mnl,
            model_hash,
            root_seed,
            sim_slots: Semaphore::new(config.sim_workers.max(1)),
            config,
            modeled,
            rents,
            cohort: cohort.map(|cohort| CohortState { cohort, extra: Mutex::new(HashMap::new()) }),
        })
    }

    /// Load everything the manifest provides; the cohort is optional.
    pub fn from_manifest(manifest: &crate::manifest::PipelineManifest, config: ServiceConfig) -> geomatch::Result<Self> {
        use crate::pipeline as p;
        let schema = p::load_schema_artifact(manifest)?;
        let locations = p::load_locations_artifact(manifest)?;
        let models = p::load_models_artifact(manifest)?;
        let mnl = p::load_preferences_artifact(manifest).ok();
        let cohort = match p::load_cohort(manifest) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("no backtest cohort loaded, /simulate is disabled: {e}");
                None
            }
        };
        let hash = p::model_hash(manifest)?;
        AppState::new(schema, locations, models, mnl, hash, manifest.root_seed, cohort, config)
    }

    pub fn has_cohort(&self) -> bool {
        self.cohort.is_some()
    }

    /// Predicted value at every modeled location, in location id order.
    pub fn predict(&self, x: &CovariateVector, case_size: u32, options: &OutcomeOptions) -> Vec<f64> {
        let locs: Vec<&Location> = self.modeled.iter().collect();
        predict_row(&self.models, &locs, x, case_size, options, Some(&self.rents))
    }

    pub fn modeled_ids(&self) -> Vec<LocationId> {
        self.modeled.iter().map(|l| l.id).collect()
    }
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<String>,
    model_hash: String,
}

impl ApiError {
    fn new(state: &AppState, status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into(), fields: Vec::new(), model_hash: state.model_hash.clone() }
    }

    fn unprocessable(state: &AppState, kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(state, StatusCode::UNPROCESSABLE_ENTITY, kind, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.kind, "message": self.message, "model_hash": self.model_hash});
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(state: &AppState, body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(state, "invalid_request", e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/locations", get(locations))
        .route("/schema", get(schema))
        .route("/predict", post(predict))
        .route("/recommend", post(recommend_handler))
        .route("/simulate", post(simulate_handler))
        .layer(middleware::from_fn_with_state(state.clone(), guard))
        .with_state(state)
}

/// Bearer-token check and the model-hash header.
async fn guard(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.config.bearer_token {
        let authorized = request.uri().path() == "/health"
            || request
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .is_some_and(|t| t == token);
        if !authorized {
            return ApiError::new(&state, StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                .into_response();
        }
    }
    let mut response = next.run(request).await;
    if let Ok(v) = HeaderValue::from_str(&state.model_hash) {
        response.headers_mut().insert(MODEL_HASH_HEADER, v);
    }
    response
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_hash": state.model_hash,
        "locations": state.modeled.len(),
        "preference_model": state.mnl.is_some(),
        "cohort": state.cohort.as_ref().map(|c| c.cohort.dataset.len()),
    }))
}

async fn locations(State(state): State<Arc<AppState>>) -> Json<Value> {
    let modeled: BTreeSet<LocationId> = state.modeled_ids().into_iter().collect();
    let list: Vec<Value> = state
        .locations
        .iter()
        .map(|l| {
            json!({
                "id": l.id,
                "name": l.name,
                "population": l.population,
                "unemployment_rate": l.unemployment_rate,
                "annual_rent": l.annual_rent,
                "growth_rate": l.growth_rate,
                "modeled": modeled.contains(&l.id),
            })
        })
        .collect();
    Json(json!({"locations": list, "model_hash": state.model_hash}))
}

async fn schema(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"schema": state.schema, "model_hash": state.model_hash}))
}

fn default_case_size() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    profile: Map<String, Value>,
    #[serde(default = "default_case_size")]
    case_size: u32,
    #[serde(default)]
    outcome_mode: OutcomeMode,
}

#[derive(Debug, Serialize)]
struct LocationValue {
    location_id: LocationId,
    predicted_value: f64,
}

fn parse_profile(state: &AppState, profile: &Map<String, Value>, case_size: u32) -> Result<CovariateVector, ApiError> {
    if case_size == 0 {
        let mut e = ApiError::unprocessable(state, "invalid_profile", "case_size must be at least 1");
        e.fields = vec!["case_size".into()];
        return Err(e);
    }
    match state.schema.covariates_from_json(profile) {
        Ok((x, _)) => Ok(x),
        Err(fields) => {
            let mut e =
                ApiError::unprocessable(state, "invalid_profile", format!("invalid profile fields: {}", fields.join(", ")));
            e.fields = fields;
            Err(e)
        }
    }
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: PredictRequest = parse_body(&state, &body)?;
    let x = parse_profile(&state, &req.profile, req.case_size)?;
    let values = state.predict(&x, req.case_size, &OutcomeOptions::new(req.outcome_mode));
    let predictions: Vec<LocationValue> = state
        .modeled
        .iter()
        .zip(values)
        .map(|(l, v)| LocationValue { location_id: l.id, predicted_value: v })
        .collect();
    Ok(Json(json!({
        "predictions": predictions,
        "outcome_mode": req.outcome_mode,
        "model_hash": state.model_hash,
    })))
}

fn default_z() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendRequest {
    profile: Map<String, Value>,
    #[serde(default)]
    unacceptable: Vec<LocationId>,
    #[serde(default = "default_z")]
    z: usize,
    /// Restrict to the preference model's top-phi locations first.
    #[serde(default)]
    phi: Option<Phi>,
    #[serde(default)]
    outcome_mode: OutcomeMode,
    #[serde(default = "default_case_size")]
    case_size: u32,
    /// Seeds tie-breaking; defaults to the pipeline's root seed.
    #[serde(default)]
    seed: Option<u64>,
}

/// Rng that orders exact ties in a `/recommend` response.
pub fn tie_break_rng(seed: u64) -> impl rand::Rng {
    seed::rng(seed)
}

/// Rng that orders exact ties in a `/recommend` preference ranking.
pub fn preference_rng(seed: u64) -> impl rand::Rng {
    seed::rng(ranking_seed(seed, 0))
}

async fn recommend_handler(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: RecommendRequest = parse_body(&state, &body)?;
    if req.z < 1 {
        return Err(ApiError::unprocessable(&state, "invalid_request", "z must be at least 1"));
    }
    let x = parse_profile(&state, &req.profile, req.case_size)?;
    let known: BTreeSet<LocationId> = state.locations.iter().map(|l| l.id).collect();
    let unknown: Vec<String> = req.unacceptable.iter().filter(|l| !known.contains(l)).map(|l| l.to_string()).collect();
    if !unknown.is_empty() {
        return Err(ApiError::unprocessable(
            &state,
            "unknown_location",
            format!("unknown location ids: {}", unknown.join(", ")),
        ));
    }
    let excluded: BTreeSet<LocationId> = req.unacceptable.iter().copied().collect();
    let seed = req.seed.unwrap_or(state.root_seed);
    let candidates: Vec<LocationId> = match req.phi {
        None => state.modeled_ids(),
        Some(phi) => {
            let mnl = state.mnl.as_ref().ok_or_else(|| {
                ApiError::new(&state, StatusCode::SERVICE_UNAVAILABLE, "no_preference_model", "no preference model is loaded")
            })?;
            let ranking = rank_locations(mnl, &x, &mut preference_rng(seed));
            acceptable_set(&ranking, phi).map_err(|e| ApiError::unprocessable(&state, "invalid_request", e.to_string()))?.locations
        }
    };
    let modeled: BTreeSet<LocationId> = state.modeled_ids().into_iter().collect();
    let acceptable: Vec<LocationId> =
        candidates.into_iter().filter(|l| !excluded.contains(l) && modeled.contains(l)).collect();
    if acceptable.is_empty() {
        return Err(ApiError::unprocessable(
            &state,
            "empty_acceptable_set",
            "every location is unacceptable; at least one modeled location must remain",
        ));
    }
    let ids = state.modeled_ids();
    let values = state.predict(&x, req.case_size, &OutcomeOptions::new(req.outcome_mode));
    let row = PredictionRow { id: 0, locations: &ids, values: &values };
    let rec = recommend(row, &acceptable, req.z, &mut tie_break_rng(seed));
    let recommendations: Vec<LocationValue> = rec
        .locations
        .iter()
        .zip(&rec.values)
        .map(|(&location_id, &predicted_value)| LocationValue { location_id, predicted_value })
        .collect();
    Ok(Json(json!({
        "recommendations": recommendations,
        "note": TRANSPARENCY_NOTE,
        "t": rec.t,
        "z": rec.z,
        "outcome_mode": req.outcome_mode,
        "model_hash": state.model_hash,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    pi_max: f64,
    phi: Phi,
    #[serde(default = "default_z")]
    z: usize,
    #[serde(default)]
    n_runs: Option<usize>,
    #[serde(default)]
    compliance_mode: ComplianceMode,
    #[serde(default)]
    outcome_mode: OutcomeMode,
    #[serde(default)]
    excluded_locations: BTreeSet<LocationId>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn simulate_handler(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: SimulateRequest = parse_body(&state, &body)?;
    let n_runs = req.n_runs.unwrap_or(state.config.max_sim_runs);
    if n_runs > state.config.max_sim_runs {
        return Err(ApiError::new(
            &state,
            StatusCode::TOO_MANY_REQUESTS,
            "run_cap_exceeded",
            format!("n_runs is capped at {} per request; use the command line for larger runs", state.config.max_sim_runs),
        ));
    }
    if state.cohort.is_none() {
        return Err(ApiError::new(
            &state,
            StatusCode::SERVICE_UNAVAILABLE,
            "no_cohort",
            "no backtest cohort is loaded; run `geomatch predict` and restart",
        ));
    }
    let config = SimulationConfig {
        pi_max: req.pi_max,
        compliance_mode: req.compliance_mode,
        phi: req.phi,
        z: req.z,
        n_runs,
        outcome_mode: req.outcome_mode,
        excluded_locations: req.excluded_locations,
        seed: req.seed.unwrap_or(state.root_seed),
        ..Default::default()
    };
    config.validate().map_err(|e| ApiError::unprocessable(&state, "invalid_request", e.to_string()))?;
    let _permit = state.sim_slots.acquire().await.map_err(|_| {
        ApiError::new(&state, StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "the simulation pool is closed")
    })?;
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || run_simulation(&worker, &config))
        .await
        .map_err(|e| ApiError::new(&state, StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let summary = result.map_err(|e| ApiError::unprocessable(&state, e.kind(), e.to_string()))?;
    Ok(Json(json!({"summary": summary, "model_hash": state.model_hash})))
}

fn run_simulation(state: &AppState, config: &SimulationConfig) -> geomatch::Result<SimulationSummary> {
    let cs = state.cohort.as_ref().expect("checked by the handler");
    let options = OutcomeOptions::new(config.outcome_mode);
    let stored;
    let matrix: &PredictionMatrix = if cs.cohort.matrix.options == options {
        &cs.cohort.matrix
    } else {
        let cached = cs.extra.lock().expect("matrix cache lock").get(&config.outcome_mode).cloned();
        stored = match cached {
            Some(m) => m,
            None => {
                let m = Arc::new(build_matrix(&cs.cohort.models, &cs.cohort.dataset, &options)?);
                cs.extra.lock().expect("matrix cache lock").insert(config.outcome_mode, m.clone());
                m
            }
        };
        &stored
    };
    let inputs = BacktestInputs { cohort: &cs.cohort.dataset, matrix, rankings: &cs.cohort.rankings };
    simulate(&inputs, config)
}
