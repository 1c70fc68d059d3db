//! HTTP clients: a blocking one for the CLI and `join`, an async one for the
//! agent daemon's heartbeat loop.

use std::time::Duration;

use gpunion_core::agent::{CoordinatorLink, KillReport, LinkError};
use gpunion_core::coordinator::{
    ClusterSummary, ControlOutcome, DepartureNotice, EventLogEntry, Heartbeat, HeartbeatAck, MigrationPlan, NodeView,
    RegisterRequest, RegisterResponse,
};
use gpunion_core::domain::{CheckpointManifest, JobId, JobRecord, JobSpec, NodeId};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::daemon::{ControlResult, LocalStatus};
use crate::error::ErrorBody;
use crate::server::{JobCancelled, JobCreated, KillAccepted};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no agent is listening on {0}")]
    AgentNotRunning(String),
}

impl ClientError {
    /// 2 validation, 3 not found, 4 unauthorized, 5 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api { status: 401 | 403, .. } => 4,
            ClientError::Api { status: 404, .. } => 3,
            ClientError::Api { .. } => 2,
            ClientError::Transport(_) | ClientError::AgentNotRunning(_) => 5,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            ClientError::Api { code, .. } => code,
            ClientError::Transport(_) => "Transport",
            ClientError::AgentNotRunning(_) => "AgentNotRunning",
        }
    }
}

impl From<ClientError> for LinkError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { code, message, .. } => LinkError::Rejected { code, message },
            ClientError::Transport(m) | ClientError::AgentNotRunning(m) => LinkError::Unreachable(m),
        }
    }
}

fn api_error(status: u16, body: &str) -> ClientError {
    match serde_json::from_str::<ErrorBody>(body) {
        Ok(b) => ClientError::Api { status, code: b.error, message: b.message },
        Err(_) => ClientError::Api { status, code: format!("Http{status}"), message: body.trim().to_string() },
    }
}

fn decode<T: DeserializeOwned>(body: &str) -> Result<T, ClientError> {
    serde_json::from_str(body).map_err(|e| ClientError::Transport(format!("malformed response: {e}")))
}

/// Blocking REST client. Must not be used from inside an async runtime.
pub struct ApiClient {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl ApiClient {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Self::with_timeout(base, token, Duration::from_secs(30))
    }

    pub fn with_timeout(base: &str, token: Option<String>, timeout: Duration) -> Self {
        let http = reqwest::blocking::Client::builder().timeout(timeout).build().expect("http client builds");
        Self { base: base.trim_end_matches('/').to_string(), token, http }
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder, token: Option<&str>) -> Result<String, ClientError> {
        let req = match token.or(self.token.as_deref()) {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(body)
        } else {
            Err(api_error(status, &body))
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        decode(&self.send(self.http.get(format!("{}{path}", self.base)), None)?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>, token: Option<&str>) -> Result<T, ClientError> {
        let mut req = self.http.post(format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        decode(&self.send(req, token)?)
    }

    pub fn submit_job(&self, spec: &JobSpec) -> Result<JobId, ClientError> {
        self.post::<_, JobCreated>("/v1/jobs", Some(spec), None).map(|c| c.job_id)
    }

    pub fn job(&self, id: JobId) -> Result<JobRecord, ClientError> {
        self.get(&format!("/v1/jobs/{id}"))
    }

    pub fn jobs(&self) -> Result<Vec<JobRecord>, ClientError> {
        self.get("/v1/jobs")
    }

    pub fn cancel_job(&self, id: JobId) -> Result<JobCancelled, ClientError> {
        decode(&self.send(self.http.delete(format!("{}/v1/jobs/{id}", self.base)), None)?)
    }

    pub fn checkpoints(&self, id: JobId) -> Result<Vec<CheckpointManifest>, ClientError> {
        self.get(&format!("/v1/jobs/{id}/checkpoints"))
    }

    pub fn nodes(&self) -> Result<Vec<NodeView>, ClientError> {
        self.get("/v1/nodes")
    }

    pub fn summary(&self) -> Result<ClusterSummary, ClientError> {
        self.get("/v1/cluster/summary")
    }

    pub fn events(&self, since: u64) -> Result<Vec<EventLogEntry>, ClientError> {
        self.get(&format!("/v1/events?since={since}"))
    }

    pub fn metrics(&self) -> Result<String, ClientError> {
        self.send(self.http.get(format!("{}/metrics", self.base)), None)
    }

    pub fn drain(&self, node: NodeId, grace_s: Option<u64>) -> Result<MigrationPlan, ClientError> {
        let q = grace_s.map(|g| format!("?grace={g}")).unwrap_or_default();
        self.post::<(), _>(&format!("/v1/nodes/{node}/drain{q}"), None, None)
    }

    pub fn pause(&self, node: NodeId) -> Result<ControlOutcome, ClientError> {
        self.post::<(), _>(&format!("/v1/nodes/{node}/pause"), None, None)
    }

    pub fn resume(&self, node: NodeId) -> Result<ControlOutcome, ClientError> {
        self.post::<(), _>(&format!("/v1/nodes/{node}/resume"), None, None)
    }

    pub fn kill(&self, node: NodeId, grace_s: u64) -> Result<KillAccepted, ClientError> {
        self.post::<(), _>(&format!("/v1/nodes/{node}/kill?grace={grace_s}"), None, None)
    }
}

impl CoordinatorLink for ApiClient {
    fn register(&mut self, req: &RegisterRequest) -> Result<RegisterResponse, LinkError> {
        Ok(self.post("/v1/nodes/register", Some(req), None)?)
    }

    fn heartbeat(&mut self, token: &str, msg: &Heartbeat) -> Result<HeartbeatAck, LinkError> {
        Ok(self.post(&format!("/v1/nodes/{}/heartbeat", msg.node_id), Some(msg), Some(token))?)
    }

    fn depart(&mut self, node: NodeId, token: &str, notice: &DepartureNotice) -> Result<(), LinkError> {
        self.post::<_, MigrationPlan>(&format!("/v1/nodes/{node}/departure"), Some(notice), Some(token))?;
        Ok(())
    }
}

pub const DEPARTURE_TIMEOUT: Duration = Duration::from_secs(2);

/// Async agent-to-coordinator link.
#[derive(Clone)]
pub struct AsyncLink {
    base: String,
    http: reqwest::Client,
}

impl AsyncLink {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let http = reqwest::Client::builder().timeout(timeout).build().expect("http client builds");
        Self { base: base.trim_end_matches('/').to_string(), http }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        token: &str,
        timeout: Option<Duration>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.post(format!("{}{path}", self.base)).bearer_auth(token).json(body);
        if let Some(t) = timeout {
            req = req.timeout(t);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            decode(&text)
        } else {
            Err(api_error(status, &text))
        }
    }

    pub async fn heartbeat(&self, token: &str, msg: &Heartbeat) -> Result<HeartbeatAck, ClientError> {
        self.post(&format!("/v1/nodes/{}/heartbeat", msg.node_id), msg, token, None).await
    }

    /// Fire-and-forget: gives up after [`DEPARTURE_TIMEOUT`].
    pub async fn depart(&self, node: NodeId, token: &str, notice: &DepartureNotice) -> Result<MigrationPlan, ClientError> {
        self.post(&format!("/v1/nodes/{node}/departure"), notice, token, Some(DEPARTURE_TIMEOUT)).await
    }
}

/// Blocking client for an agent's localhost control endpoint.
pub struct LocalAgentClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl LocalAgentClient {
    pub fn new(base: &str) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .expect("http client builds");
        Self { base: base.trim_end_matches('/').to_string(), http }
    }

    fn call<T: DeserializeOwned>(&self, req: reqwest::blocking::RequestBuilder) -> Result<T, ClientError> {
        let resp = req.send().map_err(|e| {
            if e.is_connect() {
                ClientError::AgentNotRunning(self.base.clone())
            } else {
                ClientError::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            decode(&body)
        } else {
            Err(api_error(status, &body))
        }
    }

    pub fn status(&self) -> Result<LocalStatus, ClientError> {
        self.call(self.http.get(format!("{}/local/status", self.base)))
    }

    pub fn pause(&self) -> Result<ControlResult, ClientError> {
        self.call(self.http.post(format!("{}/local/pause", self.base)))
    }

    pub fn resume(&self) -> Result<ControlResult, ClientError> {
        self.call(self.http.post(format!("{}/local/resume", self.base)))
    }

    pub fn drain(&self, grace_s: Option<u64>) -> Result<LocalStatus, ClientError> {
        let q = grace_s.map(|g| format!("?grace={g}")).unwrap_or_default();
        self.call(self.http.post(format!("{}/local/drain{q}", self.base)))
    }

    /// Returns once every workload on the node is gone.
    pub fn kill(&self, grace_s: u64, checkpoint: bool) -> Result<KillReport, ClientError> {
        self.call(self.http.post(format!("{}/local/kill?grace={grace_s}&checkpoint={checkpoint}", self.base)))
    }
}
