//! Coordinator REST server. Every request becomes a command on a single
//! queue consumed by the task that owns the [`Coordinator`]; the same task
//! runs the periodic tick.

use std::path::PathBuf;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gpunion_core::coordinator::{
    ControlOutcome, Coordinator, DepartureNotice, EventLogEntry, Heartbeat, HeartbeatAck, MigrationPlan,
    RegisterRequest, RegisterResponse,
};
use gpunion_core::domain::{CheckpointManifest, JobId, JobRecord, JobSpec, JobState, NodeId};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::error::ApiError;

type Command = Box<dyn FnOnce(&mut Coordinator) + Send>;

/// Sends commands to the coordinator task.
#[derive(Clone)]
pub struct CoordinatorHandle {
    tx: mpsc::Sender<Command>,
}

impl CoordinatorHandle {
    /// Moves `coord` onto its own task, ticking every `tick_every`.
    pub fn spawn(mut coord: Coordinator, tick_every: Duration) -> (Self, JoinHandle<()>) {
        let (tx, mut rx) = mpsc::channel::<Command>(1024);
        let task = tokio::spawn(async move {
            let mut ticker = tokio::time::interval(tick_every);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    cmd = rx.recv() => match cmd {
                        Some(cmd) => cmd(&mut coord),
                        None => break,
                    },
                    _ = ticker.tick() => {
                        let now = coord.now();
                        let report = coord.tick(now);
                        if !report.unavailable.is_empty() {
                            tracing::warn!(nodes = ?report.unavailable, "nodes marked unavailable");
                        }
                    }
                }
            }
        });
        (Self { tx }, task)
    }

    pub async fn call<R, F>(&self, f: F) -> Result<R, ApiError>
    where
        R: Send + 'static,
        F: FnOnce(&mut Coordinator) -> R + Send + 'static,
    {
        let (reply, rx) = oneshot::channel();
        let cmd: Command = Box::new(move |c| {
            let _ = reply.send(f(c));
        });
        self.tx.send(cmd).await.map_err(|_| ApiError::unavailable())?;
        rx.await.map_err(|_| ApiError::unavailable())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Directory holding the dashboard bundle; a placeholder page is served
    /// when unset.
    pub ui_dir: Option<PathBuf>,
    /// Bearer token required on operator and job endpoints when set.
    pub operator_token: Option<String>,
}

#[derive(Clone)]
struct AppState {
    coord: CoordinatorHandle,
    operator_token: Option<String>,
}

impl AppState {
    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match &self.operator_token {
            None => Ok(()),
            Some(t) if bearer(headers) == Some(t.as_str()) => Ok(()),
            Some(_) => Err(ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "operator token required")),
        }
    }
}

pub fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

fn node_id(raw: &str) -> Result<NodeId, ApiError> {
    raw.parse().map_err(|e: gpunion_core::domain::ParseNodeIdError| ApiError::bad_request(e.to_string()))
}

fn job_id(raw: &str) -> Result<JobId, ApiError> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("invalid job id {raw:?}")))
}

const PLACEHOLDER_UI: &str = include_str!("../assets/index.html");

pub fn router(coord: CoordinatorHandle, opts: ServeOptions) -> Router {
    let state = AppState { coord, operator_token: opts.operator_token };
    let api = Router::new()
        .route("/v1/nodes/register", post(register))
        .route("/v1/nodes", get(list_nodes))
        .route("/v1/nodes/{id}/heartbeat", post(heartbeat))
        .route("/v1/nodes/{id}/departure", post(departure))
        .route("/v1/nodes/{id}/drain", post(drain))
        .route("/v1/nodes/{id}/pause", post(pause))
        .route("/v1/nodes/{id}/resume", post(resume))
        .route("/v1/nodes/{id}/kill", post(kill))
        .route("/v1/jobs", post(submit_job).get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/v1/jobs/{id}/checkpoints", get(job_checkpoints))
        .route("/v1/cluster/summary", get(summary))
        .route("/v1/events", get(events))
        .route("/metrics", get(metrics))
        .route("/", get(|| async { Redirect::temporary("/ui/") }))
        .with_state(state);
    match opts.ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api
            .route("/ui", get(|| async { Html(PLACEHOLDER_UI) }))
            .route("/ui/", get(|| async { Html(PLACEHOLDER_UI) })),
    }
}

async fn register(State(s): State<AppState>, Json(req): Json<RegisterRequest>) -> Result<Json<RegisterResponse>, ApiError> {
    Ok(Json(s.coord.call(move |c| c.register_node(req)).await??))
}

async fn heartbeat(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(msg): Json<Heartbeat>,
) -> Result<Json<HeartbeatAck>, ApiError> {
    if node_id(&id)? != msg.node_id {
        return Err(ApiError::bad_request("node id in path and body differ"));
    }
    let token = bearer(&headers).unwrap_or_default().to_string();
    Ok(Json(s.coord.call(move |c| c.heartbeat_round(&msg, &token)).await??))
}

async fn departure(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(notice): Json<DepartureNotice>,
) -> Result<Json<MigrationPlan>, ApiError> {
    let node = node_id(&id)?;
    let token = bearer(&headers).unwrap_or_default().to_string();
    Ok(Json(s.coord.call(move |c| c.departure_notice(node, &token, &notice)).await??))
}

#[derive(Debug, Deserialize)]
struct GraceQuery {
    grace: Option<u64>,
}

async fn drain(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GraceQuery>,
    headers: HeaderMap,
) -> Result<Json<MigrationPlan>, ApiError> {
    s.authorize(&headers)?;
    let node = node_id(&id)?;
    Ok(Json(s.coord.call(move |c| c.drain_node(node, q.grace)).await??))
}

async fn pause(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Json<ControlOutcome>, ApiError> {
    s.authorize(&headers)?;
    let node = node_id(&id)?;
    Ok(Json(s.coord.call(move |c| c.pause_node(node)).await??))
}

async fn resume(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Json<ControlOutcome>, ApiError> {
    s.authorize(&headers)?;
    let node = node_id(&id)?;
    Ok(Json(s.coord.call(move |c| c.resume_node(node)).await??))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillAccepted {
    pub node: NodeId,
    pub grace_s: u64,
    pub outcome: ControlOutcome,
}

/// Relays a kill-switch request to the node's agent, which receives it on its
/// next heartbeat.
async fn kill(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GraceQuery>,
    headers: HeaderMap,
) -> Result<(StatusCode, Json<KillAccepted>), ApiError> {
    s.authorize(&headers)?;
    let node = node_id(&id)?;
    let grace_s = q.grace.unwrap_or(0);
    let outcome = s.coord.call(move |c| c.request_kill(node, grace_s)).await??;
    Ok((StatusCode::ACCEPTED, Json(KillAccepted { node, grace_s, outcome })))
}

async fn list_nodes(State(s): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    s.authorize(&headers)?;
    Ok(Json(s.coord.call(|c| c.nodes()).await?).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: JobId,
}

async fn submit_job(
    State(s): State<AppState>,
    headers: HeaderMap,
    Json(spec): Json<JobSpec>,
) -> Result<(StatusCode, Json<JobCreated>), ApiError> {
    s.authorize(&headers)?;
    let job_id = s.coord.call(move |c| c.enqueue_job(spec)).await??;
    Ok((StatusCode::CREATED, Json(JobCreated { job_id })))
}

async fn list_jobs(State(s): State<AppState>, headers: HeaderMap) -> Result<Json<Vec<JobRecord>>, ApiError> {
    s.authorize(&headers)?;
    Ok(Json(s.coord.call(|c| c.jobs().cloned().collect()).await?))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Json<JobRecord>, ApiError> {
    s.authorize(&headers)?;
    let id = job_id(&id)?;
    Ok(Json(s.coord.call(move |c| c.get_job(id).cloned()).await??))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCancelled {
    pub job_id: JobId,
    pub state: JobState,
}

async fn cancel_job(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Json<JobCancelled>, ApiError> {
    s.authorize(&headers)?;
    let job_id = job_id(&id)?;
    let state = s.coord.call(move |c| c.cancel_job(job_id)).await??;
    Ok(Json(JobCancelled { job_id, state }))
}

async fn job_checkpoints(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<Vec<CheckpointManifest>>, ApiError> {
    s.authorize(&headers)?;
    let id = job_id(&id)?;
    Ok(Json(s.coord.call(move |c| c.get_job(id).map(|j| j.checkpoints.clone())).await??))
}

async fn summary(State(s): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    s.authorize(&headers)?;
    Ok(Json(s.coord.call(|c| c.summary()).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    limit: Option<usize>,
}

async fn events(
    State(s): State<AppState>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Json<Vec<EventLogEntry>>, ApiError> {
    s.authorize(&headers)?;
    let limit = q.limit.unwrap_or(200).min(1000);
    Ok(Json(s.coord.call(move |c| c.recent_events(q.since, limit)).await?))
}

async fn metrics(State(s): State<AppState>) -> Result<Response, ApiError> {
    let text = s.coord.call(|c| c.metrics_text()).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], text).into_response())
}
