use std::time::{Duration, Instant};

use airways::planner::{plan, Trajectory};
use airways::project::{parse_project, LoadOptions};
use airways::service::{resolve_port, router, ServiceConfig, MAX_PLAYBACK_SAMPLES, PORT_ENV};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const PLATFORM: &str = r#"{
    "mass": 1.0, "inertia": [0.01, 0.01, 0.02],
    "rotor_thrust_coeff": 1.0, "rotor_moment_coeff": 0.1, "arm_length": 0.2,
    "rotor_force_max": 5.0, "rotor_moment_max": 0.5
}"#;

fn project(end: [f64; 3], extra: &str) -> String {
    format!(
        r#"{{"platform": {PLATFORM}, "initial_velocity": [0, 0, 0],
            "keyframes": [{{"stage": 0, "position": [0, 0, 1]}}, {{"stage": 30, "position": [{}, {}, {}]}}]{extra}}}"#,
        end[0], end[1], end[2]
    )
}

struct App {
    router: Router,
    _data: tempfile::TempDir,
}

fn app() -> App {
    let data = tempfile::tempdir().unwrap();
    let router = router(&ServiceConfig {
        data_dir: data.path().to_path_buf(),
        static_dir: None,
    });
    App { router, _data: data }
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>, header::HeaderMap) {
    let request = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, headers)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

async fn submit(app: &Router, uri: &str, body: String) -> String {
    let (status, bytes, headers) = call(app, Method::POST, uri, body).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&bytes));
    let id = json_of(&bytes)["job"].as_str().unwrap().to_string();
    assert_eq!(headers[header::LOCATION], format!("/api/jobs/{id}"));
    id
}

/// Polls until the job leaves the queued and running states.
async fn wait(app: &Router, id: &str) -> (StatusCode, Value) {
    let started = Instant::now();
    loop {
        let (status, bytes, _) = call(app, Method::GET, &format!("/api/jobs/{id}"), Body::empty()).await;
        let view = json_of(&bytes);
        if view["state"] == "done" || view["state"] == "failed" {
            return (status, view);
        }
        assert_eq!(status, StatusCode::OK);
        assert!(started.elapsed() < Duration::from_secs(120), "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

fn direct_trajectory(body: &str) -> Trajectory {
    let p = parse_project(body.as_bytes(), LoadOptions::default()).unwrap();
    plan(&p, &mut |_| {}).unwrap().trajectory
}

fn payload_trajectory(view: &Value) -> Trajectory {
    serde_json::from_value(view["result"]["trajectory"].clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn optimize_matches_the_library() {
    let app = app();
    let body = project([2.0, 1.0, 1.5], "");
    let id = submit(&app.router, "/api/optimize", body.clone()).await;
    let (status, view) = wait(&app.router, &id).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["state"], "done");
    assert_eq!(view["kind"], "optimize");
    let result = &view["result"];
    assert_eq!(result["feasibility"]["feasible"], Value::Bool(true));
    assert_eq!(payload_trajectory(&view), direct_trajectory(&body));
    let table = &result["table"];
    assert_eq!(table["rows"].as_array().unwrap().len(), 31);
    assert_eq!(table["columns"][0], "t");
    assert_eq!(table["camera_direction"].as_array().unwrap().len(), 31);
    assert!(view["timings"]["finished_at"].as_f64().unwrap() >= view["timings"]["queued_at"].as_f64().unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_posts_give_identical_trajectories() {
    let app = app();
    let body = project([1.0, -1.0, 2.0], r#", "weights": {"lambda_d": 1e-2}"#);
    let a = submit(&app.router, "/api/optimize", body.clone()).await;
    let b = submit(&app.router, "/api/optimize", body).await;
    assert_ne!(a, b);
    let (_, a) = wait(&app.router, &a).await;
    let (_, b) = wait(&app.router, &b).await;
    assert_eq!(
        serde_json::to_vec(&a["result"]["trajectory"]).unwrap(),
        serde_json::to_vec(&b["result"]["trajectory"]).unwrap()
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn validation_errors_are_400_with_the_field() {
    let app = app();
    let body = project([1.0, 0.0, 1.0], r#", "weights": {"lambda_k": -5}"#);
    let (status, bytes, _) = call(&app.router, Method::POST, "/api/optimize", body).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&bytes)["field"], "weights.lambda_k");

    let (status, _, _) = call(&app.router, Method::POST, "/api/optimize", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let unknown = project([1.0, 0.0, 1.0], r#", "colour": "red""#);
    let (status, bytes, _) = call(&app.router, Method::POST, "/api/optimize", unknown.clone()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&bytes)["field"], "colour");
    submit(&app.router, "/api/optimize?lenient=true", unknown).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stalled_planning_is_422_with_diagnostics() {
    let app = app();
    let body = project([2.0, 0.0, 1.0], r#", "obstacles": [{"center": [0, 0, 1], "radius": 0.5}]"#);
    let id = submit(&app.router, "/api/optimize", body).await;
    let (status, view) = wait(&app.router, &id).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(view["state"], "failed");
    assert!(view["error"].as_str().unwrap().contains("stopped"));
    assert!(view["result"]["iqp_report"]["iterations"].is_array());
    assert!(view["result"]["feasibility"].is_object());
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_mirrors_the_iterations() {
    let app = app();
    let body = project(
        [3.0, 0.0, 1.0],
        r#", "obstacles": [{"center": [1.5, 0.05, 1], "radius": 0.3}], "weights": {"lambda_k": 1000}"#,
    );
    let id = submit(&app.router, "/api/optimize", body).await;
    // subscribe before the job is finished; the stream replays and then follows
    let (status, bytes, headers) = call(&app.router, Method::GET, &format!("/api/jobs/{id}/events"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let text = String::from_utf8(bytes).unwrap();
    let (_, view) = wait(&app.router, &id).await;
    let iterations = view["result"]["iqp_report"]["iterations"].as_array().unwrap().len();
    assert!(iterations > 1);
    assert_eq!(text.matches("event: iteration").count(), iterations, "{text}");
    assert!(text.trim_end().ends_with("data: null") && text.contains("event: done"), "{text}");

    let (status, _, _) = call(&app.router, Method::GET, "/api/jobs/job-999999/events", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = call(&app.router, Method::GET, "/api/jobs/job-999999", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn hover_trajectory(seconds: usize) -> Value {
    let stages = seconds * 10 + 1;
    let mut data = Vec::with_capacity(stages * 19);
    for _ in 0..stages {
        let mut s = [0.0; 19];
        s[2] = 1.0;
        s[10] = 9.81;
        data.extend_from_slice(&s);
    }
    json!({ "variables": { "num_stages": stages, "dt": 0.1, "data": data } })
}

#[tokio::test(flavor = "multi_thread")]
async fn hover_simulation_is_decimated_for_playback() {
    let app = app();
    let platform: Value = serde_json::from_str(PLATFORM).unwrap();
    let body = json!({ "trajectory": hover_trajectory(30), "platform": platform });
    let id = submit(&app.router, "/api/simulate", body.to_string()).await;
    let (status, view) = wait(&app.router, &id).await;
    assert_eq!(status, StatusCode::OK, "{view}");
    let result = &view["result"];
    assert!(result["summary"]["rms_position_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(result["total_samples"], 15_001);
    let samples = result["samples"].as_array().unwrap();
    assert!(samples.len() <= MAX_PLAYBACK_SAMPLES);
    assert_eq!(samples[0][0].as_f64(), Some(0.0));
    assert!((samples.last().unwrap()[0].as_f64().unwrap() - 30.0).abs() < 1e-9);

    let url = result["log_url"].as_str().unwrap();
    let (status, csv, headers) = call(&app.router, Method::GET, url, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "text/csv");
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 15_002);
}

#[tokio::test(flavor = "multi_thread")]
async fn simulate_accepts_csv_and_rejects_bad_input() {
    let app = app();
    let platform: Value = serde_json::from_str(PLATFORM).unwrap();
    let planned = {
        let body = project([1.0, 1.0, 1.0], "");
        let id = submit(&app.router, "/api/optimize", body).await;
        wait(&app.router, &id).await.1
    };
    let p = parse_project(project([1.0, 1.0, 1.0], "").as_bytes(), LoadOptions::default()).unwrap();
    let mut csv = Vec::new();
    airways::project::write_trajectory_csv(&payload_trajectory(&planned), &mut csv).unwrap();
    let trajectory = airways::project::parse_trajectory_csv(csv.as_slice()).unwrap();
    let body = json!({ "trajectory_csv": String::from_utf8(csv).unwrap(), "platform": platform });
    let id = submit(&app.router, "/api/simulate", body.to_string()).await;
    let (status, view) = wait(&app.router, &id).await;
    assert_eq!(status, StatusCode::OK);
    let direct = airways::simulator::simulate_tracking(&trajectory, &p.platform, &p.gains(), &p.simulation).unwrap();
    assert_eq!(view["result"]["summary"], serde_json::to_value(&direct.summary).unwrap());

    let both = json!({ "trajectory": hover_trajectory(1), "trajectory_csv": "t", "platform": platform });
    let (status, _, _) = call(&app.router, Method::POST, "/api/simulate", both.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut short = hover_trajectory(1);
    short["variables"]["data"].as_array_mut().unwrap().pop();
    let (status, bytes, _) =
        call(&app.router, Method::POST, "/api/simulate", json!({ "trajectory": short, "platform": platform }).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&bytes)["field"], "trajectory.data");
    let (status, bytes, _) =
        call(&app.router, Method::POST, "/api/simulate", json!({ "trajectory": hover_trajectory(1) }).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&bytes));
}

#[tokio::test(flavor = "multi_thread")]
async fn divergence_is_422_with_the_stage() {
    let app = app();
    let platform: Value = serde_json::from_str(PLATFORM).unwrap();
    // cross-axis position feedback with a positive-feedback mode along x = -y
    let gains = json!({
        "position_feedback": [
            [8, 50, 0, 5, 0, 0],
            [50, 8, 0, 0, 5, 0],
            [0, 0, 8, 0, 0, 5]
        ],
        "attitude_gain": [[1.44, 0, 0], [0, 1.44, 0], [0, 0, 2.88]],
        "rate_gain": [[0.24, 0, 0], [0, 0.24, 0], [0, 0, 0.48]]
    });
    let planned = {
        let long = project([1.0, 0.5, 1.2], "").replace("\"stage\": 30", "\"stage\": 100");
        let id = submit(&app.router, "/api/optimize", long).await;
        wait(&app.router, &id).await.1
    };
    let body = json!({ "trajectory": planned["result"]["trajectory"], "platform": platform, "gains": gains });
    let id = submit(&app.router, "/api/simulate", body.to_string()).await;
    let (status, view) = wait(&app.router, &id).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{view}");
    let d = &view["result"]["divergence"];
    assert!(d["stage"].as_u64().unwrap() < 100);
    assert!(d["position_error"].as_f64().unwrap() > d["limit"].as_f64().unwrap());
    assert!(view["error"].as_str().unwrap().contains("stage"));
    let (status, _, _) = call(&app.router, Method::GET, &format!("/api/jobs/{id}/simlog.csv"), Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn project_crud() {
    let app = app();
    let r = &app.router;
    let (status, bytes, _) = call(r, Method::GET, "/api/projects", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes), json!({ "projects": [] }));

    let a = project([1.0, 2.0, 3.0], "");
    let b = project([3.0, 2.0, 1.0], "");
    assert_eq!(call(r, Method::PUT, "/api/projects/orbit", a.clone()).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(r, Method::PUT, "/api/projects/zig-zag", b.clone()).await.0, StatusCode::NO_CONTENT);
    let (status, bytes, _) = call(r, Method::GET, "/api/projects/orbit", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, a.as_bytes());
    let (_, bytes, _) = call(r, Method::GET, "/api/projects", Body::empty()).await;
    assert_eq!(json_of(&bytes), json!({ "projects": ["orbit", "zig-zag"] }));

    // last write wins
    assert_eq!(call(r, Method::PUT, "/api/projects/orbit", b.clone()).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(r, Method::GET, "/api/projects/orbit", Body::empty()).await.1, b.as_bytes());

    assert_eq!(call(r, Method::DELETE, "/api/projects/orbit", Body::empty()).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(r, Method::GET, "/api/projects/orbit", Body::empty()).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(r, Method::DELETE, "/api/projects/orbit", Body::empty()).await.0, StatusCode::NOT_FOUND);

    for bad in ["..%2Fescape", "has%20space", ".hidden"] {
        let (status, _, _) = call(r, Method::PUT, &format!("/api/projects/{bad}"), a.clone()).await;
        assert_eq!(status, StatusCode::CONFLICT, "{bad}");
    }
    let (status, _, _) = call(r, Method::PUT, "/api/projects/broken", "{\"platform\": 1}").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn parallel_jobs_do_not_interfere() {
    let app = app();
    let bodies: Vec<String> = (0..16)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 16.0;
            project([2.0 * a.cos(), 2.0 * a.sin(), 1.0 + 0.05 * k as f64], r#", "weights": {"lambda_d": 1e-2}"#)
        })
        .collect();
    let ids = futures::future::join_all(bodies.iter().map(|b| submit(&app.router, "/api/optimize", b.clone()))).await;
    let views = futures::future::join_all(ids.iter().map(|id| wait(&app.router, id))).await;
    for (body, (status, view)) in bodies.iter().zip(views) {
        assert_eq!(status, StatusCode::OK);
        assert_eq!(payload_trajectory(&view), direct_trajectory(body));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn static_assets_are_served_at_the_root() {
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<h1>studio</h1>").unwrap();
    let data = tempfile::tempdir().unwrap();
    let r = router(&ServiceConfig {
        data_dir: data.path().to_path_buf(),
        static_dir: Some(assets.path().to_path_buf()),
    });
    let (status, bytes, _) = call(&r, Method::GET, "/", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<h1>studio</h1>");
    let (status, _, _) = call(&r, Method::GET, "/api/projects", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn port_flag_wins_over_the_environment() {
    std::env::set_var(PORT_ENV, "9123");
    assert_eq!(resolve_port(None).unwrap(), 9123);
    assert_eq!(resolve_port(Some(7000)).unwrap(), 7000);
    std::env::set_var(PORT_ENV, "not-a-port");
    assert!(resolve_port(None).is_err());
    std::env::remove_var(PORT_ENV);
    assert_eq!(resolve_port(None).unwrap(), 8080);
}
