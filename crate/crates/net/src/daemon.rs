//! Provider agent daemon: registration, the heartbeat loop, workload
//! supervision and the local control endpoint used by `gpunion node`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use gpunion_core::agent::{
    join_with_backoff, Agent, AgentConfig, AgentSettings, KillReport, RuntimeKind, Sleeper, SimulatedProbe,
    SimulatedRegistry, SimulatedRuntime, StateDir, WorkloadCatalog,
};
use gpunion_core::clock::{Clock, ScaledClock};
use gpunion_core::domain::{AdvertisedState, ComputeCapability, GpuDescriptor, JobId, Millis, NodeId, SECOND};
use gpunion_core::resilience::{CheckpointStore, FsCheckpointStore};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;

use crate::client::{ApiClient, AsyncLink};
use crate::error::ApiError;

fn default_control() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 7071))
}

fn default_gpus() -> Vec<GpuDescriptor> {
    vec![GpuDescriptor {
        index: 0,
        model: "simulated".into(),
        memory_mib: 24576,
        compute_capability: ComputeCapability(8, 6),
    }]
}

fn default_latency() -> f64 {
    1.0
}

fn default_scale() -> f64 {
    1.0
}

/// Agent daemon configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaemonConfig {
    #[serde(flatten)]
    pub agent: AgentConfig,
    #[serde(default = "default_control")]
    pub control_listen: SocketAddr,
    /// GPUs advertised by the simulated runtime.
    #[serde(default = "default_gpus")]
    pub gpus: Vec<GpuDescriptor>,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
    /// Re-roots checkpoint storage paths under this directory.
    #[serde(default)]
    pub checkpoint_root: Option<PathBuf>,
    /// Simulated time runs this many times faster than wall time.
    #[serde(default = "default_scale")]
    pub time_scale: f64,
    /// Image reference to digest, as published by the simulated registry.
    #[serde(default)]
    pub images: BTreeMap<String, String>,
    #[serde(default)]
    pub catalog: WorkloadCatalog,
}

impl DaemonConfig {
    pub fn new(coordinator_url: &str, state_dir: impl Into<PathBuf>) -> Self {
        Self {
            agent: AgentConfig {
                coordinator_url: coordinator_url.to_string(),
                state_dir: state_dir.into(),
                heartbeat_interval_s: 10,
                grace_s: 60,
                runtime: RuntimeKind::Simulated,
            },
            control_listen: default_control(),
            gpus: default_gpus(),
            latency_ms: default_latency(),
            checkpoint_root: None,
            time_scale: default_scale(),
            images: BTreeMap::new(),
            catalog: WorkloadCatalog::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DaemonError> {
        toml::from_str(text).map_err(|e| DaemonError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("state directory: {0}")]
    StateDir(#[from] std::io::Error),
    #[error(transparent)]
    Join(#[from] gpunion_core::agent::JoinError),
    #[error("the {0:?} runtime is not available in this build; use the simulated runtime")]
    RuntimeUnavailable(RuntimeKind),
}

/// Agent status reported by the local control endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalStatus {
    pub node_id: NodeId,
    pub advertised: AdvertisedState,
    pub halted: bool,
    pub departing: bool,
    pub jobs: Vec<JobId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlResult {
    pub changed: bool,
    pub advertised: AdvertisedState,
}

struct Shared {
    agent: Mutex<Agent>,
    clock: ScaledClock,
    /// Wakes the heartbeat loop to flush departure notices.
    outgoing: Notify,
}

impl Shared {
    fn status(&self) -> LocalStatus {
        let a = self.agent.lock().unwrap();
        LocalStatus {
            node_id: a.node_id(),
            advertised: a.advertised(),
            halted: a.is_halted(),
            departing: a.is_departing(),
            jobs: a.jobs(),
        }
    }

    fn supervise(&self) -> bool {
        let halted = {
            let mut a = self.agent.lock().unwrap();
            a.supervise(self.clock.now());
            a.is_halted()
        };
        if halted {
            self.outgoing.notify_one();
        }
        halted
    }
}

pub struct RunningDaemon {
    pub node_id: NodeId,
    pub control_addr: SocketAddr,
    shared: Arc<Shared>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningDaemon {
    pub fn status(&self) -> LocalStatus {
        self.shared.status()
    }

    /// Stops the loops without a departure; the coordinator will see the
    /// node go silent.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Resolves once the agent has halted and its departure notices are out.
    pub async fn wait(mut self) {
        let _ = self.tasks.remove(0).await;
        self.shutdown().await;
    }
}

struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&mut self, ms: Millis) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Registers with the coordinator (retrying with backoff) and starts the
/// heartbeat loop, supervision and the local control endpoint.
pub async fn start(cfg: DaemonConfig) -> Result<RunningDaemon, DaemonError> {
    if cfg.agent.runtime != RuntimeKind::Simulated {
        return Err(DaemonError::RuntimeUnavailable(cfg.agent.runtime));
    }
    if !(cfg.time_scale.is_finite() && cfg.time_scale > 0.0) {
        return Err(DaemonError::Config("time_scale must be positive".into()));
    }
    let dir = StateDir::open(&cfg.agent.state_dir)?;
    let node_id = dir.node_id(&mut rand::rng())?;
    let clock = ScaledClock::new(cfg.time_scale);
    let registry = SimulatedRegistry { images: cfg.images.clone() };
    let runtime = SimulatedRuntime::new(Arc::new(clock), registry, cfg.catalog.clone(), &format!("gpunion-{node_id}"));
    let store: Arc<dyn CheckpointStore> = match &cfg.checkpoint_root {
        Some(root) => Arc::new(FsCheckpointStore::rooted(root)),
        None => Arc::new(FsCheckpointStore::new()),
    };
    let settings = AgentSettings {
        heartbeat_interval_s: cfg.agent.heartbeat_interval_s,
        grace_s: cfg.agent.grace_s,
        ..AgentSettings::default()
    };
    let mut agent = Agent::new(
        node_id,
        cfg.gpus.clone(),
        cfg.latency_ms,
        Arc::new(clock),
        Box::new(runtime),
        store,
        Box::new(SimulatedProbe),
        settings,
    );

    let req = agent.register_request();
    let url = cfg.agent.coordinator_url.clone();
    let resp = tokio::task::spawn_blocking(move || {
        let mut client = ApiClient::with_timeout(&url, None, Duration::from_secs(10));
        join_with_backoff(&mut client, &req, &mut ThreadSleeper, None)
    })
    .await
    .expect("join task")?;
    dir.store_token(&resp.token)?;
    agent.set_token(resp.token.clone());
    tracing::info!(node = %node_id, "registered with coordinator");

    let shared = Arc::new(Shared { agent: Mutex::new(agent), clock, outgoing: Notify::new() });
    let (stop, stop_rx) = watch::channel(false);
    let hb_real = clock.real(cfg.agent.heartbeat_interval_s * SECOND);
    let link = AsyncLink::new(&cfg.agent.coordinator_url, hb_real.clamp(Duration::from_millis(200), Duration::from_secs(10)));

    let listener = tokio::net::TcpListener::bind(cfg.control_listen).await?;
    let control_addr = listener.local_addr()?;
    let app = control_router(shared.clone());
    let mut rx = stop_rx.clone();
    let control = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.wait_for(|s| *s).await;
            })
            .await;
    });

    let heartbeat = tokio::spawn(heartbeat_loop(shared.clone(), link, resp.token, node_id, hb_real, stop_rx.clone()));
    let supervise = tokio::spawn(supervise_loop(shared.clone(), stop_rx));
    Ok(RunningDaemon { node_id, control_addr, shared, stop, tasks: vec![heartbeat, supervise, control] })
}

async fn heartbeat_loop(
    shared: Arc<Shared>,
    link: AsyncLink,
    token: String,
    node_id: NodeId,
    every: Duration,
    mut stop: watch::Receiver<bool>,
) {
    loop {
        let msg = shared.agent.lock().unwrap().build_heartbeat();
        if let Some(msg) = msg {
            match link.heartbeat(&token, &msg).await {
                Ok(ack) => {
                    let results = shared.agent.lock().unwrap().on_ack(&msg, &ack);
                    for e in results.into_iter().filter_map(Result::err) {
                        tracing::warn!(error = %e, "directive failed");
                    }
                }
                Err(e) => {
                    tracing::warn!(error = %e, "heartbeat failed");
                    shared.agent.lock().unwrap().link_lost();
                }
            }
        }
        loop {
            let notice = shared.agent.lock().unwrap().take_notice();
            let Some(notice) = notice else { break };
            if let Err(e) = link.depart(node_id, &token, &notice).await {
                tracing::warn!(error = %e, "departure notice not delivered");
            }
        }
        if shared.agent.lock().unwrap().is_halted() {
            return;
        }
        tokio::select! {
            _ = tokio::time::sleep(every) => {}
            _ = shared.outgoing.notified() => {}
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}

async fn supervise_loop(shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    loop {
        if shared.supervise() {
            return;
        }
        tokio::select! {
            _ = tokio::time::sleep(Duration::from_millis(50)) => {}
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}

fn control_router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/local/status", get(local_status))
        .route("/local/pause", post(local_pause))
        .route("/local/resume", post(local_resume))
        .route("/local/drain", post(local_drain))
        .route("/local/kill", post(local_kill))
        .with_state(shared)
}

async fn local_status(State(s): State<Arc<Shared>>) -> Json<LocalStatus> {
    Json(s.status())
}

fn control(s: &Shared, pause: bool) -> Result<Json<ControlResult>, ApiError> {
    let mut a = s.agent.lock().unwrap();
    let changed = if pause { a.pause() } else { a.resume() };
    let changed = changed.map_err(|e| ApiError::new(StatusCode::CONFLICT, "IllegalTransition", e.to_string()))?;
    Ok(Json(ControlResult { changed, advertised: a.advertised() }))
}

async fn local_pause(State(s): State<Arc<Shared>>) -> Result<Json<ControlResult>, ApiError> {
    control(&s, true)
}

async fn local_resume(State(s): State<Arc<Shared>>) -> Result<Json<ControlResult>, ApiError> {
    control(&s, false)
}

#[derive(Debug, Deserialize)]
struct GraceQuery {
    grace: Option<u64>,
    checkpoint: Option<bool>,
}

async fn local_drain(State(s): State<Arc<Shared>>, Query(q): Query<GraceQuery>) -> Json<LocalStatus> {
    {
        let mut a = s.agent.lock().unwrap();
        let grace = q.grace.unwrap_or(60);
        a.drain(grace);
    }
    s.supervise();
    s.outgoing.notify_one();
    Json(s.status())
}

/// Runs the kill switch and answers once every workload is gone. Never
/// touches the coordinator.
async fn local_kill(State(s): State<Arc<Shared>>, Query(q): Query<GraceQuery>) -> Json<KillReport> {
    let grace = q.grace.unwrap_or(0);
    let mut report = s.agent.lock().unwrap().kill_switch(grace, q.checkpoint.unwrap_or(true));
    while report.finished_at.is_none() {
        if s.supervise() {
            report.finished_at = Some(s.clock.now());
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    Json(report)
}
