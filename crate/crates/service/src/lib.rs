//! HTTP front end for live shifts.
//!
//! Each loaded shift gets its own scheduler thread. Handlers talk to it
//! only through a command queue; the event log is fanned out to any number
//! of server-sent-event subscribers.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/shift` | scenario, or `{"scenario", "trace", "reschedule", "comms"}` |
//! | POST | `/shift/{id}/start?speed=<x>` | |
//! | GET | `/shift/{id}/state` | |
//! | POST | `/shift/{id}/message` | `{"kind": "delegate" or "reassign", "task": <id>}` |
//! | POST | `/shift/{id}/complete` | `{"task": <id>}` |
//! | GET | `/shift/{id}/events` | event stream, one JSON event per message |
//! | GET | `/shift/{id}/report` | full report once the shift is over |

mod error;
mod shift;

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{self, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use hrsched::assignment::DEFAULT_NODE_BUDGET;
use hrsched::dynamics::RunOptions;
use hrsched::model::{ShiftSpec, TaskId};
use hrsched::monitor::{MessageKind, Trace};
use hrsched::scenario::ScenarioFile;
use hrsched::sim::{check_trace, ShiftReport};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub use error::ApiError;
use shift::{Command, ShiftHandle};
pub use shift::{JobSummary, Snapshot, Status};

#[derive(Clone)]
pub struct AppState {
    shifts: Arc<Mutex<HashMap<u64, ShiftHandle>>>,
    next_id: Arc<AtomicU64>,
    default_scenario: Option<Arc<ShiftSpec>>,
    node_budget: u64,
}

impl AppState {
    /// `default_scenario` is loaded when `POST /shift` has an empty body.
    pub fn new(default_scenario: Option<ShiftSpec>) -> Self {
        AppState {
            shifts: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            default_scenario: default_scenario.map(Arc::new),
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }

    fn handle(&self, id: u64) -> Result<ShiftHandle, ApiError> {
        self.shifts
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no shift {id}")))
    }

    async fn ask<T>(
        &self,
        id: u64,
        command: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, ApiError> {
        let handle = self.handle(id)?;
        let (tx, rx) = oneshot::channel();
        handle
            .commands
            .send(command(tx))
            .map_err(|_| ApiError::Internal("scheduler thread is gone".into()))?;
        rx.await
            .map_err(|_| ApiError::Internal("scheduler thread is gone".into()))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/shift", post(create_shift))
        .route("/shift/{id}/start", post(start_shift))
        .route("/shift/{id}/state", get(shift_state))
        .route("/shift/{id}/message", post(post_message))
        .route("/shift/{id}/complete", post(complete_task))
        .route("/shift/{id}/events", get(events))
        .route("/shift/{id}/report", get(report))
        .with_state(state)
}

/// Serves the API on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRequest {
    scenario: ScenarioFile,
    #[serde(default)]
    trace: Trace,
    #[serde(default = "yes")]
    reschedule: bool,
    #[serde(default = "yes")]
    comms: bool,
}

fn yes() -> bool {
    true
}

async fn create_shift(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let (spec, trace, run) = if body.iter().all(u8::is_ascii_whitespace) {
        let spec = app.default_scenario.as_deref().cloned().ok_or_else(|| {
            ApiError::BadRequest("no scenario given and no default loaded".into())
        })?;
        (spec, Trace::default(), RunOptions::default())
    } else {
        let value: Value = parse(&body)?;
        let request: LoadRequest = if value.get("scenario").is_some() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|scenario| LoadRequest {
                scenario,
                trace: Trace::default(),
                reschedule: true,
                comms: true,
            })
        }
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let spec = request
            .scenario
            .into_shift()
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let run = RunOptions {
            reschedule: request.reschedule,
            comms: request.comms,
            ..RunOptions::default()
        };
        (spec, request.trace, run)
    };
    check_trace(&spec, &trace).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let jobs = spec.jobs.len();
    let handle = shift::spawn(id, spec, trace, run, app.node_budget)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    app.shifts.lock().unwrap().insert(id, handle);
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "jobs": jobs }))))
}

#[derive(Deserialize)]
struct StartParams {
    speed: Option<f64>,
}

async fn start_shift(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    Query(params): Query<StartParams>,
) -> Result<Json<Snapshot>, ApiError> {
    let speed = params.speed.unwrap_or(1.0);
    if !(speed.is_finite() && speed > 0.0) {
        return Err(ApiError::BadRequest(format!(
            "speed must be positive, got {speed}"
        )));
    }
    app.ask(id, |reply| Command::Start { speed, reply })
        .await?
        .map(Json)
}

async fn shift_state(
    State(app): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Json<Snapshot>, ApiError> {
    app.ask(id, |reply| Command::Snapshot { reply })
        .await
        .map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    kind: MessageKind,
    task: TaskId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteBody {
    task: TaskId,
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    app.handle(id)?;
    let MessageBody { kind, task } = parse(&body)?;
    app.ask(id, |reply| Command::Message { kind, task, reply })
        .await??;
    Ok(Json(json!({ "accepted": true })))
}

async fn complete_task(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    app.handle(id)?;
    let CompleteBody { task } = parse(&body)?;
    app.ask(id, |reply| Command::Complete { task, reply })
        .await??;
    Ok(Json(json!({ "completed": task })))
}

async fn report(
    State(app): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Json<ShiftReport>, ApiError> {
    app.ask(id, |reply| Command::Report { reply })
        .await?
        .map(Json)
}

/// Replays the log from the start, then follows it live. The stream ends
/// once the shift is over and every event has been sent.
async fn events(
    State(app): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<sse::Event, Infallible>>>, ApiError> {
    let log = app.handle(id)?.log;
    let status = log.subscribe();
    let stream =
        futures::stream::unfold((0usize, status, log), |(i, mut status, log)| async move {
            loop {
                let seen = *status.borrow_and_update();
                if let Some(e) = log.get(i) {
                    let event = sse::Event::default()
                        .id(i.to_string())
                        .json_data(&e)
                        .expect("events serialize");
                    return Some((Ok(event), (i + 1, status, log)));
                }
                if seen.closed || status.changed().await.is_err() {
                    return None;
                }
            }
        });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
