mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use annoselect::binmat;
use annoselect::dataset::write_dataset_dir;
use annoselect::server::{load_state, router, AppState};
use axum::body::Body;
use axum::http::{header, Method as HttpMethod, Request, StatusCode};
use axum::Router;
use common::{clustered_dataset, sample_id};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn dataset_dir(dir: &Path, n: usize) {
    let ds = clustered_dataset(n, 3, 4, 3.0, 21);
    write_dataset_dir(dir, &ds).unwrap();
    std::fs::create_dir_all(dir.join("media")).unwrap();
    let bytes: Vec<u8> = (0..100u8).collect();
    std::fs::write(dir.join("media").join(format!("{}.mp4", sample_id(0))), bytes).unwrap();
}

fn setup(n: usize) -> (tempfile::TempDir, Arc<AppState>) {
    let dir = tempfile::tempdir().unwrap();
    dataset_dir(&dir.path().join("data"), n);
    let state = load_state(&dir.path().join("data"), Some(dir.path().join("store"))).unwrap();
    (dir, state)
}

async fn send(app: &Router, method: HttpMethod, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn send_json(app: &Router, method: HttpMethod, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn session_body(method: &str, budget: usize) -> Value {
    json!({
        "dataset_name": "",
        "track": common::TRACK,
        "method": method,
        "budget": budget,
        "seed": 3,
        "annotator_id": "ann1",
        "annotator_group": "expert",
    })
}

async fn new_session(app: &Router, method: &str, budget: usize) -> String {
    let (status, v) = send_json(app, HttpMethod::POST, "/api/sessions", Some(session_body(method, budget))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn dataset_and_projections() {
    let (_dir, state) = setup(60);
    let app = router(state);
    let (status, v) = send_json(&app, HttpMethod::GET, "/api/dataset", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["n_samples"], 60);
    let (_, v) = send_json(&app, HttpMethod::GET, "/api/projections", None).await;
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"pca"));

    let (status, bytes) = send(&app, HttpMethod::GET, "/api/projections/pca/coords", None).await;
    assert_eq!(status, StatusCode::OK);
    let m = binmat::decode(&bytes).unwrap();
    assert_eq!((m.n_rows, m.n_cols), (60, 2));

    let (status, v) = send_json(&app, HttpMethod::GET, "/api/projections/nope/coords", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["kind"].is_string() && v["message"].is_string());
}

#[tokio::test]
async fn labeling_flow_and_errors() {
    let (_dir, state) = setup(60);
    let app = router(state);
    let id = new_session(&app, "FAFT", 3).await;
    assert_eq!(id, "s0001");
    let (_, v) = send_json(&app, HttpMethod::GET, &format!("/api/sessions/{id}"), None).await;
    let current = v["current"]["sample_id"].as_str().unwrap().to_string();

    let uri = format!("/api/sessions/{id}/labels");
    let (status, v) = send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": current, "value": "zzz"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "UnknownClass");

    let (status, v) = send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": current, "value": "c1"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["labeled_count"], 1);
    assert_ne!(v["current"]["sample_id"].as_str().unwrap(), current);

    let far = v["current"]["sample_id"].as_str().unwrap().to_string();
    let unreached = (0..60).map(sample_id).find(|s| *s != current && *s != far).unwrap();
    let (status, v) = send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": unreached, "value": "c0"}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");

    let (status, _) = send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": "missing", "value": "c0"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, HttpMethod::POST, &uri, Some(json!({"value": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(&app, HttpMethod::GET, "/api/sessions/s9999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, bytes) = send(&app, HttpMethod::GET, &format!("/api/sessions/{id}/export.csv"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with(&format!("{current},activity,FAFT,ann1,expert,c1,false,1,")));
}

#[tokio::test]
async fn queue_and_navigation() {
    let (_dir, state) = setup(60);
    let app = router(state);
    let id = new_session(&app, "2DV", 5).await;
    let q = format!("/api/sessions/{id}/queue");
    for i in [4, 9] {
        send_json(&app, HttpMethod::POST, &q, Some(json!({"sample_id": sample_id(i)}))).await;
    }
    let nav = format!("/api/sessions/{id}/navigate");
    let (status, v) = send_json(&app, HttpMethod::POST, &nav, Some(json!({"action": "next"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["current"]["sample_id"], sample_id(4));
    assert_eq!(v["queue"], json!([sample_id(9)]));
    let (status, _) = send_json(&app, HttpMethod::POST, &nav, Some(json!({"action": "jump"}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn concurrent_labels_are_serialized() {
    let (_dir, state) = setup(60);
    let app = router(state);
    let id = new_session(&app, "2DV", 10).await;
    let uri = format!("/api/sessions/{id}/labels");
    let post = |sid: String| {
        let app = app.clone();
        let uri = uri.clone();
        tokio::spawn(async move { send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": sid, "value": "c0"}))).await })
    };
    let (a, b) = (post(sample_id(1)), post(sample_id(2)));
    assert_eq!(a.await.unwrap().0, StatusCode::OK);
    assert_eq!(b.await.unwrap().0, StatusCode::OK);
    let (_, v) = send_json(&app, HttpMethod::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(v["labeled_count"], 2);

    let (a, b) = (post(sample_id(3)), post(sample_id(3)));
    a.await.unwrap();
    b.await.unwrap();
    let (_, v) = send_json(&app, HttpMethod::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(v["labeled_count"], 3);
}

#[tokio::test]
async fn media_supports_range_requests() {
    let (_dir, state) = setup(30);
    let app = router(state);
    let req = Request::builder()
        .uri(format!("/media/{}/video", sample_id(0)))
        .header(header::RANGE, "bytes=10-19")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::PARTIAL_CONTENT);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(body.as_ref(), &(10..20u8).collect::<Vec<_>>()[..]);
    let (status, _) = send(&app, HttpMethod::GET, &format!("/media/{}/audio", sample_id(0)), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn tsne_job_completes_and_registers_projection() {
    let (_dir, state) = setup(30);
    let app = router(state);
    let cfg = json!({"perplexity": 5.0, "n_iterations": 60, "exaggeration_iterations": 20, "momentum_switch_iteration": 20, "learning_rate": 10.0});
    let (status, v) = send_json(&app, HttpMethod::POST, "/api/projections/tsne", Some(json!({"name": "ts", "config": cfg}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    let job = v["job_id"].as_u64().unwrap();
    let mut done = false;
    for _ in 0..200 {
        let (_, v) = send_json(&app, HttpMethod::GET, &format!("/api/jobs/{job}"), None).await;
        if v["status"] == "done" {
            done = true;
            break;
        }
        assert_ne!(v["status"], "failed", "{v}");
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    assert!(done);
    let (status, bytes) = send(&app, HttpMethod::GET, "/api/projections/ts/coords", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(binmat::decode(&bytes).unwrap().n_rows, 30);

    let bad = json!({"name": "ts2", "config": {"perplexity": 50.0}});
    let (status, _) = send_json(&app, HttpMethod::POST, "/api/projections/tsne", Some(bad)).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn sessions_persist_across_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let store = dir.path().join("store");
    dataset_dir(&data, 40);
    {
        let state = load_state(&data, Some(store.clone())).unwrap();
        let app = router(state.clone());
        let id = new_session(&app, "2DV", 4).await;
        let uri = format!("/api/sessions/{id}/labels");
        send_json(&app, HttpMethod::POST, &uri, Some(json!({"sample_id": sample_id(7), "value": "c2"}))).await;
        assert_eq!(state.flush().await.unwrap(), 1);
    }
    assert!(store.join("s0001.asns").exists());
    let state = load_state(&data, Some(store)).unwrap();
    assert_eq!(state.session_ids().await, vec!["s0001".to_string()]);
    let app = router(state);
    let (_, v) = send_json(&app, HttpMethod::GET, "/api/sessions/s0001", None).await;
    assert_eq!(v["labeled_count"], 1);
    assert_eq!(v["labels"][0]["label"], "c2");
    assert_eq!(new_session(&app, "RND", 3).await, "s0002");
}

#[tokio::test]
async fn analysis_endpoints() {
    let (_dir, state) = setup(90);
    let app = router(state);
    for (m, seed) in [("RND", 1), ("RND", 2), ("FAFT", 1), ("FAFT", 2)] {
        let mut body = session_body(m, 60);
        body["seed"] = json!(seed);
        body["annotator_id"] = json!(format!("ann{seed}"));
        let (_, v) = send_json(&app, HttpMethod::POST, "/api/sessions", Some(body)).await;
        let id = v["id"].as_str().unwrap().to_string();
        for _ in 0..60 {
            let (_, v) = send_json(&app, HttpMethod::GET, &format!("/api/sessions/{id}"), None).await;
            let sid = v["current"]["sample_id"].as_str().unwrap().to_string();
            let i: usize = sid[3..].parse().unwrap();
            let body = json!({"sample_id": sid, "value": format!("c{}", i % 3)});
            send_json(&app, HttpMethod::POST, &format!("/api/sessions/{id}/labels"), Some(body)).await;
        }
    }
    let (status, v) = send_json(&app, HttpMethod::GET, "/api/analysis/histograms?track=activity", None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["groups"].as_array().unwrap().len(), 2);
    assert_eq!(v["groups"][0]["method"], "RND");
    let (status, bytes) = send(&app, HttpMethod::GET, "/api/analysis/histograms?track=activity&format=svg", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(bytes).unwrap().starts_with("<svg"));
    let (status, _) = send(&app, HttpMethod::GET, "/api/analysis/histograms?track=activity&group=wizards", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = send_json(
        &app,
        HttpMethod::GET,
        "/api/analysis/curve?track=activity&method=FAFT&checkpoints=20,60&repeats=2",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let (status, v) = send_json(
        &app,
        HttpMethod::GET,
        "/api/analysis/risk?tracks=activity&task=demo&checkpoints=20,60&repeats=2&rare_threshold=0.4",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let (status, v) = send_json(&app, HttpMethod::GET, "/api/analysis/risk?tracks=activity&task=demo&checkpoints=20,60&repeats=2", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "NoRareClass");
}

#[tokio::test]
async fn serve_reports_startup_failures() {
    use annoselect::server::{serve, ServeConfig, ServeError};
    let dir = tempfile::tempdir().unwrap();
    let cfg = |root: &Path, bind| ServeConfig {
        bind,
        dataset_root: root.to_path_buf(),
        store: dir.path().join("store"),
    };
    let missing = dir.path().join("missing");
    let err = serve(cfg(&missing, "127.0.0.1:0".parse().unwrap())).await.unwrap_err();
    assert!(matches!(err, ServeError::IngestFailure(_)), "{err}");

    let data = dir.path().join("data");
    dataset_dir(&data, 20);
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let err = serve(cfg(&data, taken.local_addr().unwrap())).await.unwrap_err();
    assert!(matches!(err, ServeError::BindFailure(..)), "{err}");
}
