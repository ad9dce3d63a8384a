//! In-memory job registry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use tokio::sync::watch;

use crate::simulator::SimLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Optimize,
    Simulate,
}

/// Ordered: a job only ever moves to a later state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// Wall-clock timestamps in seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub queued_at: f64,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobEvent {
    pub event: &'static str,
    pub data: Value,
}

#[derive(Debug)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub timings: Timings,
    /// Present once the job finished, also for failures where it carries the
    /// diagnostics.
    pub result: Option<Arc<Value>>,
    pub error: Option<String>,
    /// HTTP status reported for the finished job.
    pub status: u16,
    pub events: Vec<JobEvent>,
    pub simlog: Option<Arc<SimLog>>,
    changed: watch::Sender<usize>,
}

impl JobRecord {
    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.changed.subscribe()
    }

    fn advance(&mut self, to: JobState) {
        assert!(to > self.state, "job {} cannot go from {:?} to {:?}", self.id, self.state, to);
        self.state = to;
    }

    fn notify(&self) {
        self.changed.send_replace(self.events.len());
    }
}

/// Snapshot of a job as returned by `GET /api/jobs/{id}`.
#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Arc<Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Default)]
struct Inner {
    jobs: HashMap<String, JobRecord>,
    next: u64,
}

/// All registry operations take the one lock, so each is atomic.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    inner: Arc<Mutex<Inner>>,
}

impl Registry {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create(&self, kind: JobKind) -> String {
        let mut inner = self.lock();
        inner.next += 1;
        let id = format!("job-{:06}", inner.next);
        let (changed, _) = watch::channel(0);
        inner.jobs.insert(
            id.clone(),
            JobRecord {
                id: id.clone(),
                kind,
                state: JobState::Queued,
                timings: Timings { queued_at: now(), ..Timings::default() },
                result: None,
                error: None,
                status: 200,
                events: Vec::new(),
                simlog: None,
                changed,
            },
        );
        id
    }

    pub fn start(&self, id: &str) {
        self.update(id, |job| {
            job.advance(JobState::Running);
            job.timings.started_at = Some(now());
        });
    }

    pub fn push_event(&self, id: &str, event: &'static str, data: Value) {
        self.update(id, |job| job.events.push(JobEvent { event, data }));
    }

    pub fn finish(&self, id: &str, result: Value, simlog: Option<SimLog>) {
        self.update(id, |job| {
            job.advance(JobState::Done);
            job.timings.finished_at = Some(now());
            job.result = Some(Arc::new(result));
            job.simlog = simlog.map(Arc::new);
            job.events.push(JobEvent { event: "done", data: Value::Null });
        });
    }

    /// `result` carries whatever diagnostics the failure produced.
    pub fn fail(&self, id: &str, status: u16, error: String, result: Value) {
        self.update(id, |job| {
            job.advance(JobState::Failed);
            job.timings.finished_at = Some(now());
            job.status = status;
            job.events.push(JobEvent { event: "failed", data: Value::String(error.clone()) });
            job.error = Some(error);
            job.result = Some(Arc::new(result));
        });
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut inner = self.lock();
        if let Some(job) = inner.jobs.get_mut(id) {
            f(job);
            job.notify();
        }
    }

    /// The view and the HTTP status it should be served with.
    pub fn view(&self, id: &str) -> Option<(JobView, u16)> {
        let inner = self.lock();
        inner.jobs.get(id).map(|job| {
            let status = if job.state.is_terminal() { job.status } else { 200 };
            (
                JobView {
                    id: job.id.clone(),
                    kind: job.kind,
                    state: job.state,
                    timings: job.timings,
                    result: job.result.clone(),
                    error: job.error.clone(),
                },
                status,
            )
        })
    }

    /// Events from `from` on, whether the job is finished, and a receiver
    /// that fires on the next change.
    pub fn events_since(&self, id: &str, from: usize) -> Option<(Vec<JobEvent>, bool, watch::Receiver<usize>)> {
        let inner = self.lock();
        inner.jobs.get(id).map(|job| {
            let events = job.events.get(from..).unwrap_or_default().to_vec();
            (events, job.state.is_terminal(), job.subscribe())
        })
    }

    pub fn simlog(&self, id: &str) -> Option<Option<Arc<SimLog>>> {
        self.lock().jobs.get(id).map(|job| job.simlog.clone())
    }
}
