//! HTTP API over the experiment engine.
//!
//! Experiments run asynchronously on a bounded worker pool and are polled by
//! id. Completed experiments are immutable; `POST .../step` evaluates
//! what-if controls against a completed experiment without changing it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coexist_core::context::{ContextBroker, ContextKind, ContextSnapshot};
use coexist_core::dsaf::{single_step, DsaError, StepControls};
use coexist_core::geo::GeoPoint;
use coexist_core::iet::World;
use coexist_core::scenario::{load_scenario, load_scenario_inline, Scenario};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::engine::{
    new_experiment_id, now, Completed, Engine, EngineError, ExperimentOutput, ExperimentRequest, WeatherArg,
};
use crate::export::{map_geojson, TierCuts};

pub const API_SCHEMA_VERSION: u32 = 1;

/// Structured error body; never carries a backtrace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id:?} not found"))
    }

    fn not_ready(id: &str, status: &str) -> Self {
        Self::new(StatusCode::CONFLICT, "not_ready", "not ready")
            .with_detail(json!({"experiment_id": id, "status": status}))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::ScenarioNotFound(_) | EngineError::PolicyNotFound(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", msg)
            }
            EngineError::Scenario(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_scenario", msg),
            EngineError::Policy(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_policy", msg),
            EngineError::Invalid(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_request", msg),
            EngineError::Dsa(d) => d.into(),
            EngineError::Context(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "context_unavailable", msg),
            EngineError::Iet(_) | EngineError::Store(_) => Self::internal(msg),
        }
    }
}

impl From<DsaError> for ApiError {
    fn from(e: DsaError) -> Self {
        let msg = e.to_string();
        match e {
            DsaError::UnknownMbs(ids) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_mbs", msg).with_detail(json!({ "ids": ids }))
            }
            DsaError::InvalidControls(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_controls", msg),
            DsaError::Policy(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_policy", msg),
            DsaError::Iet(_) => Self::internal(msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
enum Slot {
    Pending,
    Running,
    Done(Arc<Completed>),
    Failed(ErrorBody),
}

impl Slot {
    fn status(&self) -> Status {
        match self {
            Slot::Pending => Status::Pending,
            Slot::Running => Status::Running,
            Slot::Done(_) => Status::Done,
            Slot::Failed(_) => Status::Failed,
        }
    }
}

#[derive(Debug, Clone)]
struct RegisteredScenario {
    scenario: Arc<Scenario>,
    dir: Option<PathBuf>,
}

struct Inner {
    engine: Engine,
    broker: Arc<ContextBroker>,
    workers: Arc<Semaphore>,
    worker_count: u32,
    cuts: TierCuts,
    scenarios: RwLock<HashMap<String, RegisteredScenario>>,
    experiments: RwLock<HashMap<String, Slot>>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(engine: Engine, broker: Arc<ContextBroker>, workers: usize) -> Self {
        Self(Arc::new(Inner {
            engine,
            broker,
            workers: Arc::new(Semaphore::new(workers.max(1))),
            worker_count: workers.max(1) as u32,
            cuts: TierCuts::default(),
            scenarios: RwLock::default(),
            experiments: RwLock::default(),
        }))
    }

    pub fn with_tier_cuts(self, cuts: TierCuts) -> Self {
        let inner = Arc::try_unwrap(self.0).unwrap_or_else(|_| panic!("tier cuts are set before sharing the state"));
        Self(Arc::new(Inner { cuts, ..inner }))
    }

    /// Holds every worker slot until the guard drops; queued experiments
    /// stay pending meanwhile.
    pub async fn pause(&self) -> tokio::sync::OwnedSemaphorePermit {
        let n = self.0.worker_count;
        self.0
            .workers
            .clone()
            .acquire_many_owned(n)
            .await
            .expect("worker pool is never closed")
    }

    pub fn broker(&self) -> &Arc<ContextBroker> {
        &self.0.broker
    }

    fn slot(&self, id: &str) -> Option<Slot> {
        self.0.experiments.read().expect("experiments lock").get(id).cloned()
    }

    fn set_slot(&self, id: &str, slot: Slot) {
        self.0
            .experiments
            .write()
            .expect("experiments lock")
            .insert(id.to_string(), slot);
    }

    fn registered(&self, id: &str) -> Option<RegisteredScenario> {
        self.0.scenarios.read().expect("scenarios lock").get(id).cloned()
    }

    /// A completed experiment, from memory or reloaded from the store.
    async fn completed(&self, id: &str) -> ApiResult<Arc<Completed>> {
        match self.slot(id) {
            Some(Slot::Done(c)) => return Ok(c),
            Some(Slot::Failed(body)) => {
                return Err(ApiError::new(StatusCode::CONFLICT, "failed", "experiment failed")
                    .with_detail(serde_json::to_value(body).unwrap_or_default()))
            }
            Some(other) => return Err(ApiError::not_ready(id, status_str(other.status()))),
            None => {}
        }
        let state = self.clone();
        let key = id.to_string();
        let restored = tokio::task::spawn_blocking(move || state.restore(&key))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        let c = Arc::new(restored);
        self.set_slot(id, Slot::Done(c.clone()));
        Ok(c)
    }

    fn restore(&self, id: &str) -> ApiResult<Completed> {
        let store = self
            .0
            .engine
            .store()
            .ok_or_else(|| ApiError::not_found("experiment", id))?;
        let rec = store
            .experiment(id)
            .map_err(|_| ApiError::not_found("experiment", id))?;
        let output: ExperimentOutput = serde_json::from_value(rec.body)
            .map_err(|e| ApiError::internal(format!("stored record unreadable: {e}")))?;
        let registered = self.registered(&output.request.scenario).map(|r| (r.scenario, r.dir));
        let prepared = self.0.engine.prepare(output.request.clone(), registered)?;
        let world = World::prepare(&prepared.scenario).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Completed {
            output,
            world: Arc::new(world),
            policy: prepared.policy,
        })
    }
}

fn status_str(s: Status) -> &'static str {
    match s {
        Status::Pending => "pending",
        Status::Running => "running",
        Status::Done => "done",
        Status::Failed => "failed",
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scenarios", post(post_scenario))
        .route("/experiments", post(post_experiment))
        .route("/experiments/{id}", get(get_experiment))
        .route("/experiments/{id}/trace.csv", get(get_trace))
        .route("/experiments/{id}/report.csv", get(get_report))
        .route("/experiments/{id}/map.geojson", get(get_map))
        .route("/experiments/{id}/step", post(post_step))
        .route("/contexts/current", get(get_context))
        .route("/contexts/override", post(post_override))
        .with_state(state)
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok", "schema_version": API_SCHEMA_VERSION}))
}

/// Either a server-side manifest path or the three files inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScenarioUpload {
    Path {
        path: String,
    },
    Inline {
        manifest: String,
        mbs_csv: String,
        buildings_geojson: String,
    },
}

async fn post_scenario(
    State(state): State<AppState>,
    body: Result<Json<ScenarioUpload>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(upload) = body.map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_scenario",
            "expected {path} or {manifest, mbs_csv, buildings_geojson}",
        )
        .with_detail(json!(e.body_text()))
    })?;
    let engine = state.0.engine.clone();
    let loaded = tokio::task::spawn_blocking(move || match upload {
        ScenarioUpload::Path { path } => {
            let manifest = engine.manifest_path(&path).ok_or_else(|| {
                ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_scenario",
                    format!("no manifest at {path:?}"),
                )
            })?;
            let l = load_scenario(&manifest).map_err(|e| ApiError::from(EngineError::from(e)))?;
            Ok((l, manifest.parent().map(PathBuf::from)))
        }
        ScenarioUpload::Inline {
            manifest,
            mbs_csv,
            buildings_geojson,
        } => load_scenario_inline(&manifest, &mbs_csv, &buildings_geojson)
            .map(|l| (l, None))
            .map_err(|e| ApiError::from(EngineError::from(e))),
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let (loaded, dir) = loaded;
    let id = format!("scn-{}", uuid::Uuid::new_v4().simple());
    let s = loaded.scenario;
    let body = json!({
        "id": id,
        "name": s.name,
        "mbs_count": s.mbs.len(),
        "building_count": s.buildings.len(),
        "warnings": loaded.warnings,
    });
    state.0.scenarios.write().expect("scenarios lock").insert(
        id,
        RegisteredScenario {
            scenario: Arc::new(s),
            dir,
        },
    );
    Ok(Json(body))
}

async fn post_experiment(
    State(state): State<AppState>,
    body: Result<Json<ExperimentRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(request) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    let registered = state.registered(&request.scenario).map(|r| (r.scenario, r.dir));
    let engine = state.0.engine.clone();
    let prepared = tokio::task::spawn_blocking(move || engine.prepare(request, registered))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;

    let id = new_experiment_id();
    state.set_slot(&id, Slot::Pending);
    let task_state = state.clone();
    let task_id = id.clone();
    tokio::spawn(async move {
        let Ok(_permit) = task_state.0.workers.clone().acquire_owned().await else {
            return;
        };
        task_state.set_slot(&task_id, Slot::Running);
        let engine = task_state.0.engine.clone();
        let broker = task_state.0.broker.clone();
        let run_id = task_id.clone();
        let result = tokio::task::spawn_blocking(move || engine.execute(prepared, run_id, Some(&broker))).await;
        let slot = match result {
            Ok(Ok(done)) => Slot::Done(Arc::new(done)),
            Ok(Err(e)) => {
                tracing::warn!(experiment = %task_id, "experiment failed: {e}");
                Slot::Failed(ApiError::from(e).body)
            }
            Err(e) => Slot::Failed(ApiError::internal(e.to_string()).body),
        };
        task_state.set_slot(&task_id, slot);
    });
    Ok(Json(json!({"id": id, "status": "pending"})))
}

async fn get_experiment(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    match state.slot(&id) {
        Some(Slot::Failed(err)) => Ok(Json(json!({"id": id, "status": "failed", "error": err}))),
        Some(Slot::Pending) | Some(Slot::Running) => {
            let s = state.slot(&id).map(|s| s.status()).unwrap_or(Status::Pending);
            Ok(Json(json!({"id": id, "status": s})))
        }
        _ => {
            let c = state.completed(&id).await?;
            Ok(Json(json!({"id": id, "status": "done", "record": c.output})))
        }
    }
}

fn csv_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn get_trace(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let c = state.completed(&id).await?;
    c.output.trace_csv(false).map(csv_response).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_trace",
            "single-step experiments have no trace",
        )
    })
}

async fn get_report(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let c = state.completed(&id).await?;
    Ok(csv_response(c.output.report_csv()))
}

async fn get_map(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let c = state.completed(&id).await?;
    let body = map_geojson(&c.output, &state.0.cuts);
    Ok(([(header::CONTENT_TYPE, "application/geo+json")], Json(body)).into_response())
}

async fn post_step(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<StepControls>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(controls) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    let c = state.completed(&id).await?;
    let outcome = tokio::task::spawn_blocking(move || single_step(&c.world, &controls, &c.output.context, &c.policy))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(json!({
        "experiment_id": id,
        "verdict": outcome.verdict,
        "threshold_db": outcome.threshold_db,
        "margin_db": outcome.margin_db,
        "aggregate_i_over_n_db": outcome.report.aggregate_i_over_n_db,
        "outcome": outcome,
    })))
}

/// Current broker weather; clear sky when no provider or override is set.
fn current_context(broker: &ContextBroker, location: GeoPoint) -> ApiResult<ContextSnapshot> {
    if broker.has_provider(ContextKind::Weather) {
        broker
            .current_weather(now())
            .map_err(|e| ApiError::from(EngineError::from(e)))
    } else {
        Ok(ContextSnapshot::clear(location))
    }
}

async fn get_context(State(state): State<AppState>) -> ApiResult<Json<ContextSnapshot>> {
    let broker = state.0.broker.clone();
    Ok(Json(current_context(&broker, broker.location())?))
}

/// `{"weather": "rainy"}` (or a rain rate) sets the override; `{"weather": null}` clears it.
#[derive(Debug, Clone, Deserialize)]
pub struct OverrideRequest {
    pub weather: Option<WeatherArg>,
}

async fn post_override(
    State(state): State<AppState>,
    body: Result<Json<OverrideRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<ContextSnapshot>> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    let broker = state.0.broker.clone();
    match req.weather {
        Some(w) => {
            let snap = w.resolve(broker.location())?;
            broker
                .set_override(snap.weather_kind, snap.rain_rate_mm_per_hr)
                .map_err(|e| ApiError::from(EngineError::from(e)))?;
        }
        None => broker.clear_override(),
    }
    Ok(Json(current_context(&broker, broker.location())?))
}
