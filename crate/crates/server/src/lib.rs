//! HTTP/JSON service over one scenario and one knowledge bundle.
//!
//! Runs execute one at a time on a blocking worker. Hazardous actions are
//! confirmed through the service queue (`/confirmations`). Every run event
//! gets a global, increasing id and is streamed on `/events`; a client that
//! reconnects with `Last-Event-ID` gets the missed events from the backlog.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

use guiscout::agent::{resolve_task, run_task, AgentConfig, RunOptions};
use guiscout::bundle::KnowledgeBundle;
use guiscout::env::Scenario;
use guiscout::events::{EventKind, EventSink, Phase, RunEvent, RunStatus};
use guiscout::planner::ExecutionResult;
use guiscout::safety::{ConfirmationQueue, Decision, ResolveError};

const BROADCAST_CAPACITY: usize = 1024;

type Numbered = (u64, RunEvent);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Finished,
}

/// Append-only record of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task_id: String,
    pub phase: Phase,
    pub state: RunState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    pub events: Vec<RunEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ExecutionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task_id: String,
    pub phase: Phase,
    pub state: RunState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    pub events: usize,
}

#[derive(Default)]
struct Log {
    next_id: u64,
    backlog: Vec<Numbered>,
}

/// Shared service state. Also the event sink handed to every run.
pub struct Service {
    scenario: Arc<Scenario>,
    bundle: Arc<KnowledgeBundle>,
    config: AgentConfig,
    queue: Arc<ConfirmationQueue>,
    runs: Mutex<BTreeMap<String, RunRecord>>,
    log: Mutex<Log>,
    tx: broadcast::Sender<Numbered>,
    next_run: AtomicU64,
    worker: tokio::sync::Mutex<()>,
}

impl Service {
    /// The channel setting in `config` is replaced by the service queue.
    pub fn new(
        scenario: Arc<Scenario>,
        bundle: KnowledgeBundle,
        mut config: AgentConfig,
    ) -> Arc<Self> {
        config.channel = "service-queue".into();
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        Arc::new(Self {
            scenario,
            bundle: Arc::new(bundle),
            config,
            queue: ConfirmationQueue::new(),
            runs: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Log::default()),
            tx,
            next_run: AtomicU64::new(1),
            worker: tokio::sync::Mutex::new(()),
        })
    }

    pub fn queue(&self) -> &Arc<ConfirmationQueue> {
        &self.queue
    }

    pub fn run(&self, id: &str) -> Option<RunRecord> {
        self.runs.lock().unwrap().get(id).cloned()
    }

    /// Events with an id greater than `after`, plus a receiver for later
    /// ones. Taken under one lock so nothing is missed or duplicated.
    fn subscribe(&self, after: u64) -> (Vec<Numbered>, broadcast::Receiver<Numbered>) {
        let log = self.log.lock().unwrap();
        let rx = self.tx.subscribe();
        let missed = log
            .backlog
            .iter()
            .filter(|(id, _)| *id > after)
            .cloned()
            .collect();
        (missed, rx)
    }

    fn update(&self, run_id: &str, f: impl FnOnce(&mut RunRecord)) {
        if let Some(r) = self.runs.lock().unwrap().get_mut(run_id) {
            f(r);
        }
    }
}

impl EventSink for Service {
    fn publish(&self, event: &RunEvent) {
        self.update(&event.run_id, |r| {
            r.state = RunState::Running;
            r.events.push(event.clone());
            if let EventKind::RunFinished { status, .. } = &event.kind {
                r.status = Some(*status);
            }
        });
        let mut log = self.log.lock().unwrap();
        log.next_id += 1;
        let id = log.next_id;
        log.backlog.push((id, event.clone()));
        // No subscribers is fine; the backlog keeps everything.
        let _ = self.tx.send((id, event.clone()));
    }
}

#[derive(Debug, Deserialize)]
pub struct TaskRequest {
    #[serde(default)]
    pub task_id: Option<String>,
    #[serde(default)]
    pub goal_text: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct DecisionRequest {
    pub decision: Decision,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/tasks", post(submit_task))
        .route("/graph", get(graph))
        .route("/tree", get(tree))
        .route("/confirmations/pending", get(pending))
        .route("/confirmations/{id}", post(resolve))
        .route("/events", get(events))
        .with_state(service)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_runs(State(s): State<Arc<Service>>) -> Json<Vec<RunSummary>> {
    let runs = s.runs.lock().unwrap();
    Json(
        runs.values()
            .map(|r| RunSummary {
                run_id: r.run_id.clone(),
                task_id: r.task_id.clone(),
                phase: r.phase,
                state: r.state,
                status: r.status,
                events: r.events.len(),
            })
            .collect(),
    )
}

async fn get_run(State(s): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match s.run(&id) {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown run `{id}`")),
    }
}

async fn submit_task(State(s): State<Arc<Service>>, Json(req): Json<TaskRequest>) -> Response {
    let Some(key) = req.task_id.or(req.goal_text) else {
        return error(StatusCode::BAD_REQUEST, "expected `task_id` or `goal_text`");
    };
    let task = match resolve_task(&s.scenario, &s.bundle, &key) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::NOT_FOUND, e.to_string()),
    };
    let run_id = format!("run-{}", s.next_run.fetch_add(1, Ordering::SeqCst));
    s.runs.lock().unwrap().insert(
        run_id.clone(),
        RunRecord {
            run_id: run_id.clone(),
            task_id: task.id.clone(),
            phase: Phase::Execute,
            state: RunState::Queued,
            status: None,
            events: Vec::new(),
            result: None,
            error: None,
        },
    );
    let service = s.clone();
    let id = run_id.clone();
    tokio::spawn(async move {
        let _turn = service.worker.lock().await;
        let worker = service.clone();
        let rid = id.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let sink: Arc<dyn EventSink> = worker.clone();
            let opts = RunOptions {
                run_id: Some(rid),
                sinks: vec![sink],
                queue: Some(worker.queue.clone()),
                ..RunOptions::default()
            };
            run_task(
                worker.scenario.clone(),
                &worker.bundle,
                &task,
                &worker.config,
                &opts,
            )
        })
        .await;
        service.update(&id, |r| {
            r.state = RunState::Finished;
            match outcome {
                Ok(Ok(out)) => r.result = Some(out.result),
                Ok(Err(e)) => {
                    r.status = Some(RunStatus::Failure);
                    r.error = Some(e.to_string());
                }
                Err(e) => {
                    r.status = Some(RunStatus::Failure);
                    r.error = Some(format!("run worker panicked: {e}"));
                }
            }
        });
    });
    (
        StatusCode::ACCEPTED,
        Json(serde_json::json!({ "run_id": run_id })),
    )
        .into_response()
}

async fn graph(State(s): State<Arc<Service>>) -> Response {
    Json(&s.bundle.graph).into_response()
}

async fn tree(State(s): State<Arc<Service>>) -> Response {
    Json(&s.bundle.tree).into_response()
}

async fn pending(State(s): State<Arc<Service>>) -> Response {
    Json(s.queue.pending()).into_response()
}

async fn resolve(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> Response {
    match s.queue.resolve(&id, req.decision) {
        Ok(()) => Json(serde_json::json!({ "id": id, "decision": req.decision })).into_response(),
        Err(e @ ResolveError::NotFound) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ ResolveError::Conflict) => error(StatusCode::CONFLICT, e.to_string()),
    }
}

fn sse_event(id: u64, event: &RunEvent) -> Event {
    Event::default()
        .id(id.to_string())
        .event(event.kind.name())
        .json_data(event)
        .expect("run events serialize")
}

async fn events(
    State(s): State<Arc<Service>>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(0);
    let (missed, rx) = s.subscribe(after);
    let last = missed.last().map_or(after, |(id, _)| *id);
    let backlog = stream::iter(missed.into_iter().map(|(id, e)| Ok(sse_event(id, &e))));
    // A lagging subscriber loses broadcast items; it can reconnect with its
    // last id and recover them from the backlog.
    let live = BroadcastStream::new(rx).filter_map(move |item| async move {
        match item {
            Ok((id, e)) if id > last => Some(Ok(sse_event(id, &e))),
            _ => None,
        }
    });
    Sse::new(backlog.chain(live)).keep_alive(KeepAlive::default())
}

/// Binds `addr` (port 0 picks a free port).
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
) -> Result<(), ServeError> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, router(service)).await?;
    Ok(())
}
