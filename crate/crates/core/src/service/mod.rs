//! HTTP service for the design studio.
//!
//! Optimize and simulate requests become jobs that run on the blocking thread
//! pool; clients poll `GET /api/jobs/{id}` or follow the server-sent event
//! stream at `/api/jobs/{id}/events`. Projects are stored as plain files under
//! the data directory. Anything outside `/api` is served from the static
//! directory when one is configured.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/optimize` | project document, 202 + job id |
//! | POST | `/api/simulate` | [`SimulateRequest`], 202 + job id |
//! | GET | `/api/jobs/{id}` | job state and result; 422 for stalled or diverged runs |
//! | GET | `/api/jobs/{id}/events` | iteration events |
//! | GET | `/api/jobs/{id}/simlog.csv` | full simulation log |
//! | GET | `/api/projects` | stored names |
//! | GET, PUT, DELETE | `/api/projects/{name}` | stored documents |

mod jobs;
mod payload;

use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use log::{info, warn};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::planner::plan;
use crate::project::{parse_project, write_simlog_csv, LoadOptions};
use crate::simulator::simulate_tracking;
use crate::Error;

pub use jobs::{JobEvent, JobKind, JobState, JobView, Registry, Timings};
pub use payload::{
    decimate, ErrorBody, OptimizeResult, SimulateRequest, SimulateResult, TrajectoryTable, MAX_PLAYBACK_SAMPLES,
};

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "AIRWAYS_PORT";

const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Projects live in `<data_dir>/projects`.
    pub data_dir: PathBuf,
    /// Built studio assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct AppState {
    registry: Registry,
    projects: Arc<PathBuf>,
}

/// `--port` wins over `AIRWAYS_PORT`, which wins over the default.
pub fn resolve_port(flag: Option<u16>) -> crate::Result<u16> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::validation(PORT_ENV, format!("{v:?} is not a port number"))),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub fn router(config: &ServiceConfig) -> Router {
    let state = AppState {
        registry: Registry::default(),
        projects: Arc::new(config.data_dir.join("projects")),
    };
    let api = Router::new()
        .route("/api/optimize", post(optimize))
        .route("/api/simulate", post(simulate))
        .route("/api/jobs/{id}", get(job))
        .route("/api/jobs/{id}/events", get(events))
        .route("/api/jobs/{id}/simlog.csv", get(simlog))
        .route("/api/projects", get(list_projects))
        .route("/api/projects/{name}", get(get_project).put(put_project).delete(delete_project))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `0.0.0.0:port` and serves until the process ends.
pub async fn serve(config: ServiceConfig, port: u16) -> io::Result<()> {
    tokio::fs::create_dir_all(config.data_dir.join("projects")).await?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(&config)).await
}

fn error_response(status: StatusCode, e: &Error) -> Response {
    (status, Json(ErrorBody::from(e))).into_response()
}

fn message(status: StatusCode, text: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: text.into(), field: None })).into_response()
}

fn accepted(id: &str) -> Response {
    let mut r = (StatusCode::ACCEPTED, Json(json!({ "job": id }))).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("/api/jobs/{id}")) {
        r.headers_mut().insert(header::LOCATION, v);
    }
    r
}

#[derive(Debug, Default, Deserialize)]
struct OptimizeQuery {
    #[serde(default)]
    lenient: bool,
}

async fn optimize(State(state): State<AppState>, Query(q): Query<OptimizeQuery>, body: Bytes) -> Response {
    let project = match parse_project(&body, LoadOptions { lenient: q.lenient }) {
        Ok(p) => p,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    let registry = state.registry.clone();
    let id = registry.create(JobKind::Optimize);
    let job = id.clone();
    tokio::task::spawn_blocking(move || {
        registry.start(&job);
        let mut progress = |it: &crate::planner::IqpIteration| {
            registry.push_event(&job, "iteration", serde_json::to_value(it).unwrap_or(Value::Null));
        };
        let outcome = plan(&project, &mut progress).and_then(|o| OptimizeResult::new(o, &project));
        match outcome {
            Ok(result) => {
                let ok = result.feasibility.feasible && !result.iqp_report.termination.is_failure();
                let termination = result.iqp_report.termination;
                let value = serde_json::to_value(&result).unwrap_or(Value::Null);
                if ok {
                    registry.finish(&job, value, None);
                } else {
                    let why = if termination.is_failure() {
                        format!("planning stopped: {termination:?}")
                    } else {
                        "planned trajectory is infeasible".to_string()
                    };
                    registry.fail(&job, 422, why, value);
                }
            }
            Err(e) => registry.fail(&job, 500, e.to_string(), serde_json::to_value(ErrorBody::from(&e)).unwrap_or_default()),
        }
    });
    accepted(&id)
}

async fn simulate(State(state): State<AppState>, body: Bytes) -> Response {
    let request: SimulateRequest = match serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_slice(&body)) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            let field = if path == "." { "document".to_string() } else { path };
            return error_response(StatusCode::BAD_REQUEST, &Error::validation(field, e.into_inner().to_string()));
        }
    };
    let (trajectory, params, gains, settings) = match request.resolve() {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e),
    };
    let registry = state.registry.clone();
    let id = registry.create(JobKind::Simulate);
    let job = id.clone();
    tokio::task::spawn_blocking(move || {
        registry.start(&job);
        match simulate_tracking(&trajectory, &params, &gains, &settings) {
            Ok(log) => {
                let result = SimulateResult::new(&log, format!("/api/jobs/{job}/simlog.csv"));
                registry.finish(&job, serde_json::to_value(&result).unwrap_or_default(), Some(log));
            }
            Err(Error::Diverged(d)) => {
                let text = d.to_string();
                registry.fail(&job, 422, text, json!({ "divergence": d }));
            }
            Err(e) => {
                let status = if matches!(e, Error::Validation { .. }) { 400 } else { 500 };
                registry.fail(&job, status, e.to_string(), serde_json::to_value(ErrorBody::from(&e)).unwrap_or_default());
            }
        }
    });
    accepted(&id)
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.registry.view(&id) {
        Some((view, status)) => {
            let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(view)).into_response()
        }
        None => message(StatusCode::NOT_FOUND, format!("no job {id}")),
    }
}

async fn events(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if state.registry.view(&id).is_none() {
        return message(StatusCode::NOT_FOUND, format!("no job {id}"));
    }
    Sse::new(event_stream(state.registry, id))
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response()
}

/// Replays the job's events from the start, then follows it until it ends.
fn event_stream(registry: Registry, id: String) -> impl Stream<Item = Result<Event, Infallible>> {
    struct Cursor {
        registry: Registry,
        id: String,
        next: usize,
        pending: std::collections::VecDeque<JobEvent>,
        finished: bool,
    }
    let cursor = Cursor {
        registry,
        id,
        next: 0,
        pending: Default::default(),
        finished: false,
    };
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.pending.pop_front() {
                let event = Event::default()
                    .event(ev.event)
                    .data(serde_json::to_string(&ev.data).unwrap_or_default());
                return Some((Ok(event), c));
            }
            if c.finished {
                return None;
            }
            let (events, terminal, mut rx) = c.registry.events_since(&c.id, c.next)?;
            c.next += events.len();
            c.pending.extend(events);
            if terminal {
                c.finished = true;
                continue;
            }
            // subscribed under the same lock as the read, so no change is missed
            if c.pending.is_empty() && rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

async fn simlog(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.registry.simlog(&id) {
        None => message(StatusCode::NOT_FOUND, format!("no job {id}")),
        Some(None) => message(StatusCode::NOT_FOUND, format!("job {id} has no simulation log")),
        Some(Some(log)) => {
            let mut buf = Vec::new();
            if let Err(e) = write_simlog_csv(&log, &mut buf) {
                return message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            }
            ([(header::CONTENT_TYPE, "text/csv")], buf).into_response()
        }
    }
}

/// Names are 1 to 64 characters of letters, digits, `_`, `-` and `.`,
/// starting with a letter or digit.
pub fn valid_project_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphanumeric())
        && name.len() <= 64
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn project_path(state: &AppState, name: &str) -> Result<PathBuf, Response> {
    if valid_project_name(name) {
        Ok(state.projects.join(format!("{name}.json")))
    } else {
        Err(message(StatusCode::CONFLICT, format!("invalid project name {name:?}")))
    }
}

async fn list_projects(State(state): State<AppState>) -> Response {
    let mut names = Vec::new();
    match tokio::fs::read_dir(state.projects.as_ref()).await {
        Ok(mut dir) => loop {
            match dir.next_entry().await {
                Ok(Some(entry)) => {
                    let file = entry.file_name();
                    if let Some(name) = file.to_str().and_then(|f| f.strip_suffix(".json")) {
                        if valid_project_name(name) {
                            names.push(name.to_string());
                        }
                    }
                }
                Ok(None) => break,
                Err(e) => return message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            }
        },
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
    names.sort();
    Json(json!({ "projects": names })).into_response()
}

async fn get_project(State(state): State<AppState>, Path(name): Path<String>) -> Response {
    let path = match project_path(&state, &name) {
        Ok(p) => p,
        Err(r) => return r,
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => message(StatusCode::NOT_FOUND, format!("no project {name}")),
        Err(e) => message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Stores the document verbatim after checking that it loads.
async fn put_project(State(state): State<AppState>, Path(name): Path<String>, body: Bytes) -> Response {
    let path = match project_path(&state, &name) {
        Ok(p) => p,
        Err(r) => return r,
    };
    if let Err(e) = parse_project(&body, LoadOptions::default()) {
        return error_response(StatusCode::BAD_REQUEST, &e);
    }
    let write = async {
        tokio::fs::create_dir_all(state.projects.as_ref()).await?;
        // write then rename so readers never see a partial document
        let tmp = path.with_extension("json.tmp");
        tokio::fs::write(&tmp, &body).await?;
        tokio::fs::rename(&tmp, &path).await
    };
    match write.await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => {
            warn!("storing project {name}: {e}");
            message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
    }
}

async fn delete_project(State(state): State<AppState>, Path(name): Path<String>) -> Response {
    let path = match project_path(&state, &name) {
        Ok(p) => p,
        Err(r) => return r,
    };
    match tokio::fs::remove_file(&path).await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => message(StatusCode::NOT_FOUND, format!("no project {name}")),
        Err(e) => message(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_names_are_sanitized() {
        for ok in ["orbit", "zig-zag_2", "a.b", "X1"] {
            assert!(valid_project_name(ok), "{ok}");
        }
        for bad in ["", "../etc", ".hidden", "a/b", "a b", "é", &"x".repeat(65)] {
            assert!(!valid_project_name(bad), "{bad}");
        }
    }
}
