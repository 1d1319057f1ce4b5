use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use coexist::api::{router, AppState};
use coexist::engine::{Engine, ExperimentOutput};
use coexist_core::context::ContextBroker;
use coexist_core::geo::GeoPoint;
use coexist_core::store::Store;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn state_with(engine: Engine) -> AppState {
    let broker = ContextBroker::new(GeoPoint::new(37.2025, -80.434444, 0.0).unwrap());
    AppState::new(engine, Arc::new(broker), 2)
}

fn state() -> AppState {
    state_with(Engine::new(fixtures()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn submit(app: &Router, request: Value) -> String {
    let (s, v) = call_json(app, "POST", "/experiments", Some(request)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "pending");
    v["id"].as_str().unwrap().to_string()
}

async fn wait_done(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (s, v) = call_json(app, "GET", &format!("/experiments/{id}"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        match v["status"].as_str().unwrap() {
            "done" => return v["record"].clone(),
            "failed" => panic!("experiment failed: {v}"),
            _ => tokio::time::sleep(Duration::from_millis(20)).await,
        }
    }
    panic!("experiment {id} did not finish");
}

fn clear_request() -> Value {
    json!({"scenario": "blacksburg_synth", "weather": "clear", "mode": "feedback_loop"})
}

fn assert_error_shape(v: &Value) {
    assert!(v["code"].is_string() && v["message"].is_string(), "{v}");
    assert!(v.get("detail").is_some(), "{v}");
}

#[tokio::test]
async fn healthz_is_live() {
    let app = router(state());
    let (s, v) = call_json(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clear_feedback_loop_converges() {
    let app = router(state());
    let id = submit(&app, clear_request()).await;
    let record = wait_done(&app, &id).await;
    assert_eq!(record["decision"]["converged"], true);
    assert_eq!(record["decision"]["ez_radius_m"], 3000.0);
    assert_eq!(record["threshold_db"], -8.5);
    for k in ["setup_ms", "interference_analysis_ms", "dsa_decision_ms", "total_ms"] {
        assert!(record["timings"][k].is_number(), "{k}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn map_is_not_ready_until_done() {
    let st = state();
    let app = router(st.clone());
    let guard = st.pause().await;
    let id = submit(&app, clear_request()).await;
    let (s, v) = call_json(&app, "GET", &format!("/experiments/{id}/map.geojson"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["message"], "not ready");
    assert_error_shape(&v);
    let (s, _) = call(&app, "GET", &format!("/experiments/{id}/trace.csv"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, v) = call_json(&app, "GET", &format!("/experiments/{id}"), None).await;
    assert_eq!(v["status"], "pending");
    drop(guard);
    wait_done(&app, &id).await;
    let (s, _) = call(&app, "GET", &format!("/experiments/{id}/map.geojson"), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn map_contract() {
    let app = router(state());
    let id = submit(&app, clear_request()).await;
    let record = wait_done(&app, &id).await;
    let (s, map) = call_json(&app, "GET", &format!("/experiments/{id}/map.geojson"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(map["type"], "FeatureCollection");
    let features = map["features"].as_array().unwrap();
    let role = |r: &'static str| features.iter().filter(move |f| f["properties"]["role"] == r);
    assert_eq!(role("fss").count(), 1);
    assert_eq!(role("mbs").count(), 33);
    let ez: Vec<_> = role("exclusion_zone").collect();
    assert_eq!(ez.len(), 1);
    assert_eq!(ez[0]["properties"]["radius_m"], 3000.0);
    let ring = ez[0]["geometry"]["coordinates"][0].as_array().unwrap();
    assert_eq!(ring.first(), ring.last());

    let threshold = record["threshold_db"].as_f64().unwrap();
    let revoked = record["decision"]["revoked"].as_object().unwrap();
    for f in role("mbs") {
        let p = &f["properties"];
        let id = p["id"].as_str().unwrap();
        assert_eq!(p["active"], !revoked.contains_key(id), "{id}");
        assert_eq!(p["revoked_reason"], revoked.get(id).cloned().unwrap_or(Value::Null));
        let v = p["individual_in_db"].as_f64().unwrap();
        let expected = if v >= threshold {
            "high"
        } else if v >= threshold - 10.0 {
            "medium"
        } else {
            "low"
        };
        assert_eq!(p["interference_tier"], expected, "{id}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn csv_exports_are_stable() {
    let app = router(state());
    let id = submit(&app, clear_request()).await;
    let record = wait_done(&app, &id).await;
    let (s, a) = call(&app, "GET", &format!("/experiments/{id}/trace.csv"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = call(&app, "GET", &format!("/experiments/{id}/trace.csv"), None).await;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("iteration,ez_m,aggregate_in_db,active_count,elapsed_ms\n"));
    assert_eq!(
        text.lines().count(),
        1 + record["decision"]["trace"].as_array().unwrap().len()
    );

    let (s, r) = call(&app, "GET", &format!("/experiments/{id}/report.csv"), None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(r).unwrap();
    assert_eq!(text.lines().count(), 34);

    // A second identical experiment exports the same bytes.
    let id2 = submit(&app, clear_request()).await;
    wait_done(&app, &id2).await;
    let (_, c) = call(&app, "GET", &format!("/experiments/{id2}/report.csv"), None).await;
    assert_eq!(text.as_bytes(), c.as_slice());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn step_validates_and_evaluates() {
    let app = router(state());
    let id = submit(&app, clear_request()).await;
    let record = wait_done(&app, &id).await;

    let (s, v) = call_json(
        &app,
        "POST",
        &format!("/experiments/{id}/step"),
        Some(json!({"mbs": {"mbs-01": true, "ghost-7": true}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_shape(&v);
    assert!(v["message"].as_str().unwrap().contains("ghost-7"));
    assert_eq!(v["detail"]["ids"], json!(["ghost-7"]));

    // Reproducing the converged decision passes.
    let mut mbs = serde_json::Map::new();
    for (id, reason) in record["decision"]["revoked"].as_object().unwrap() {
        if reason != "inside_ez" {
            mbs.insert(id.clone(), json!(false));
        }
    }
    let controls = json!({"ez_radius_m": record["decision"]["ez_radius_m"], "mbs": mbs});
    let (s, v) = call_json(&app, "POST", &format!("/experiments/{id}/step"), Some(controls)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["verdict"], "pass");
    assert!(v["margin_db"].as_f64().unwrap() >= 0.0);

    // Everything on fails.
    let (_, v) = call_json(&app, "POST", &format!("/experiments/{id}/step"), Some(json!({}))).await;
    assert_eq!(v["verdict"], "fail");

    // Steps never mutate the stored experiment.
    let again = wait_done(&app, &id).await;
    assert_eq!(again, record);
}

#[tokio::test]
async fn unknown_references_are_404() {
    let app = router(state());
    let (s, v) = call_json(&app, "POST", "/experiments", Some(json!({"scenario": "atlantis"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error_shape(&v);
    let (s, _) = call_json(
        &app,
        "POST",
        "/experiments",
        Some(json!({"scenario": "blacksburg_synth", "policy": "/nonexistent/policy.toml"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call_json(&app, "GET", "/experiments/exp-missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error_shape(&v);
    let (s, _) = call_json(&app, "GET", "/experiments/exp-missing/map.geojson", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let app = router(state());
    let (s, v) = call_json(&app, "POST", "/experiments", Some(json!({"mode": "feedback_loop"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error_shape(&v);
    let (s, v) = call_json(
        &app,
        "POST",
        "/experiments",
        Some(json!({"scenario": "blacksburg_synth", "weather": "hail"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    let (s, _) = call_json(
        &app,
        "POST",
        "/experiments",
        Some(json!({"scenario": "blacksburg_synth", "mode": "single_step"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scenario_upload_inline_and_by_path() {
    let app = router(state());
    let dir = fixtures().join("blacksburg_synth");
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap();
    let manifest = read("scenario.toml").replace("weather_trace = \"weather.csv\"\n", "");
    let (s, v) = call_json(
        &app,
        "POST",
        "/scenarios",
        Some(json!({"manifest": manifest, "mbs_csv": read("mbs.csv"), "buildings_geojson": read("buildings.geojson")})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["mbs_count"], 33);
    let scenario_id = v["id"].as_str().unwrap().to_string();

    let id = submit(&app, json!({"scenario": scenario_id, "weather": "rainy"})).await;
    let record = wait_done(&app, &id).await;
    assert_eq!(record["decision"]["ez_radius_m"], 4000.0);
    assert_eq!(record["threshold_db"], -12.0);

    let (s, v) = call_json(&app, "POST", "/scenarios", Some(json!({"path": dir.to_str().unwrap()}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");

    let (s, v) = call_json(
        &app,
        "POST",
        "/scenarios",
        Some(json!({"manifest": "schema_version = 1\nname = ", "mbs_csv": "", "buildings_geojson": "{}"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error_shape(&v);
    let (s, _) = call_json(&app, "POST", "/scenarios", Some(json!({"nonsense": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn weather_override_steers_experiments() {
    let app = router(state());
    let (s, v) = call_json(&app, "GET", "/contexts/current", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["weather_kind"], "clear");

    let (s, v) = call_json(&app, "POST", "/contexts/override", Some(json!({"weather": "rainy"}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["weather_kind"], "rain_snow");
    let (_, v) = call_json(&app, "GET", "/contexts/current", None).await;
    assert_eq!(v["rain_rate_mm_per_hr"], 10.0);

    let id = submit(&app, json!({"scenario": "blacksburg_synth"})).await;
    let record = wait_done(&app, &id).await;
    assert_eq!(record["threshold_db"], -12.0);
    assert_eq!(record["context"]["provenance"]["provider_id"], "override");

    let (_, v) = call_json(&app, "POST", "/contexts/override", Some(json!({"weather": null}))).await;
    assert_eq!(v["weather_kind"], "clear");
    let (s, _) = call_json(&app, "POST", "/contexts/override", Some(json!({"weather": -3.0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn records_survive_a_restart_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let id;
    let record;
    {
        let store = Arc::new(Store::open(&path).unwrap());
        let app = router(state_with(Engine::new(fixtures()).with_store(store)));
        id = submit(&app, clear_request()).await;
        record = wait_done(&app, &id).await;
    }
    let store = Arc::new(Store::open(&path).unwrap());
    let app = router(state_with(Engine::new(fixtures()).with_store(store)));
    let restored = wait_done(&app, &id).await;
    assert_eq!(restored, record);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/experiments/{id}/step"),
        Some(json!({"ez_radius_m": 5000.0})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cli_and_api_produce_field_identical_records() {
    let out = tempfile::tempdir().unwrap();
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_coexist"))
        .args([
            "--fixtures",
            fixtures().to_str().unwrap(),
            "run",
            "--scenario",
            "blacksburg_synth",
        ])
        .args([
            "--weather",
            "clear",
            "--seed",
            "42",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let cli: ExperimentOutput =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("record.json")).unwrap()).unwrap();

    let app = router(state());
    let id = submit(&app, serde_json::to_value(&cli.request).unwrap()).await;
    let api: ExperimentOutput = serde_json::from_value(wait_done(&app, &id).await).unwrap();
    assert_eq!(api.normalized(), cli.normalized());
}
