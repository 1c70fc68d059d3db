mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use gpunion_core::agent::{KillReport, RuntimeKind, WorkloadProfile};
use gpunion_core::coordinator::NodeView;
use gpunion_core::domain::{JobRecord, JobState, NodeState, SECOND};
use gpunion_net::daemon::ControlResult;
use gpunion_net::{start_agent, DaemonConfig, DaemonError, LocalStatus, RunningDaemon, ServeOptions};
use support::*;
use tempfile::TempDir;

struct Rig {
    coord: Server,
    relay: Relay,
    daemon: Option<RunningDaemon>,
    control: String,
    _dirs: (TempDir, TempDir),
    ckpt_root: std::path::PathBuf,
}

async fn rig(time_scale: f64, checkpoint_s: f64) -> Rig {
    let coord = serve(ServeOptions::default()).await;
    let relay = Relay::start(coord.addr).await;
    let state = tempfile::tempdir().unwrap();
    let ckpt = tempfile::tempdir().unwrap();
    let mut cfg = DaemonConfig::new(&relay.base, state.path());
    cfg.control_listen = "127.0.0.1:0".parse().unwrap();
    cfg.gpus = vec![gpu(0)];
    cfg.time_scale = time_scale;
    cfg.checkpoint_root = Some(ckpt.path().into());
    cfg.images.insert(IMAGE.into(), DIGEST.into());
    cfg.catalog.fallback = WorkloadProfile { checkpoint_base_s: checkpoint_s, checkpoint_per_gib_s: 0.0, ..Default::default() };
    let daemon = start_agent(cfg).await.unwrap();
    let control = format!("http://{}", daemon.control_addr);
    let ckpt_root = ckpt.path().to_path_buf();
    Rig { coord, relay, daemon: Some(daemon), control, _dirs: (state, ckpt), ckpt_root }
}

impl Rig {
    async fn status(&self) -> LocalStatus {
        reqwest::get(format!("{}/local/status", self.control)).await.unwrap().json().await.unwrap()
    }

    async fn node(&self) -> NodeView {
        let nodes: Vec<NodeView> =
            reqwest::get(format!("{}/v1/nodes", self.coord.base)).await.unwrap().json().await.unwrap();
        nodes.into_iter().next().unwrap()
    }

    async fn run_job(&self) {
        let resp = reqwest::Client::new().post(format!("{}/v1/jobs", self.coord.base)).json(&spec(600)).send().await.unwrap();
        assert!(resp.status().is_success());
        assert!(eventually(Duration::from_secs(10), || async { !self.status().await.jobs.is_empty() }).await);
    }

    async fn kill(&self, grace: u64) -> (KillReport, Duration) {
        let started = Instant::now();
        let report = reqwest::Client::new()
            .post(format!("{}/local/kill?grace={grace}", self.control))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        (report, started.elapsed())
    }
}

fn files_under(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.flatten()
                .map(|e| if e.path().is_dir() { files_under(&e.path()) } else { 1 })
                .sum()
        })
        .unwrap_or(0)
}

#[tokio::test(flavor = "multi_thread")]
async fn daemon_registers_and_runs_a_job() {
    let r = rig(20.0, 5.0).await;
    let node_id = r.daemon.as_ref().unwrap().node_id;
    let node = r.node().await;
    assert_eq!(node.id, node_id);
    assert_eq!(node.state, NodeState::Active);
    r.run_job().await;
    let status = r.status().await;
    assert_eq!(status.node_id, node_id);
    assert!(!status.halted);
}

#[tokio::test(flavor = "multi_thread")]
async fn kill_with_zero_grace_completes_within_a_second_while_coordinator_is_unreachable() {
    let r = rig(20.0, 5.0).await;
    r.run_job().await;
    r.relay.blackhole();

    let (report, elapsed) = r.kill(0).await;
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
    assert_eq!(report.workloads, 1);
    assert!(report.finished_at.is_some());
    let status = r.status().await;
    assert!(status.halted);
    assert!(status.jobs.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn kill_with_grace_checkpoints_before_stopping_while_coordinator_is_unreachable() {
    // 60x time: the 60 s grace is one real second, a checkpoint a third of one.
    let r = rig(60.0, 20.0).await;
    r.run_job().await;
    let before = files_under(&r.ckpt_root);
    r.relay.blackhole();

    let (report, elapsed) = r.kill(60).await;
    let sim_ms = report.finished_at.unwrap() - report.invoked_at;
    assert!(sim_ms >= 20 * SECOND && sim_ms <= 60 * SECOND + SECOND, "{sim_ms} ms");
    assert!(elapsed < Duration::from_secs(3), "{elapsed:?}");
    assert!(files_under(&r.ckpt_root) > before);
    assert!(r.status().await.halted);
}

#[tokio::test(flavor = "multi_thread")]
async fn kill_relayed_by_the_coordinator_halts_the_agent() {
    let mut r = rig(20.0, 5.0).await;
    r.run_job().await;
    let node_id = r.daemon.as_ref().unwrap().node_id;
    let resp = reqwest::Client::new()
        .post(format!("{}/v1/nodes/{node_id}/kill?grace=0", r.coord.base))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), reqwest::StatusCode::ACCEPTED);

    let daemon = r.daemon.take().unwrap();
    tokio::time::timeout(Duration::from_secs(5), daemon.wait()).await.expect("agent halts");
    // A zero-grace kill is an emergency departure: the node is failed, not departed.
    assert!(eventually(Duration::from_secs(3), || async { r.node().await.state == NodeState::Unavailable }).await);
    let jobs: Vec<JobRecord> = reqwest::get(format!("{}/v1/jobs", r.coord.base)).await.unwrap().json().await.unwrap();
    assert_ne!(jobs[0].state, JobState::Running);
}

#[tokio::test(flavor = "multi_thread")]
async fn local_pause_is_advertised_to_the_coordinator() {
    let r = rig(20.0, 5.0).await;
    let paused: ControlResult = reqwest::Client::new()
        .post(format!("{}/local/pause", r.control))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(paused.changed);
    assert!(eventually(Duration::from_secs(3), || async { r.node().await.state == NodeState::Paused }).await);

    reqwest::Client::new().post(format!("{}/local/resume", r.control)).send().await.unwrap();
    assert!(eventually(Duration::from_secs(3), || async { r.node().await.state == NodeState::Active }).await);
}

#[tokio::test(flavor = "multi_thread")]
async fn graceful_drain_departs_from_the_coordinator() {
    let mut r = rig(60.0, 5.0).await;
    r.run_job().await;
    let resp = reqwest::Client::new().post(format!("{}/local/drain?grace=30", r.control)).send().await.unwrap();
    assert!(resp.status().is_success());
    let daemon = r.daemon.take().unwrap();
    tokio::time::timeout(Duration::from_secs(5), daemon.wait()).await.expect("drain finishes");
    assert!(eventually(Duration::from_secs(3), || async { r.node().await.state == NodeState::Departed }).await);
}

#[tokio::test]
async fn oci_runtime_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = DaemonConfig::new("http://127.0.0.1:9", dir.path());
    cfg.agent.runtime = RuntimeKind::OciRuntime;
    assert!(matches!(start_agent(cfg).await, Err(DaemonError::RuntimeUnavailable(RuntimeKind::OciRuntime))));
}

#[test]
fn config_parses_from_toml() {
    let cfg = DaemonConfig::from_toml(
        r#"
        coordinator_url = "http://coord:8080"
        state_dir = "/var/lib/gpunion"
        heartbeat_interval_s = 10
        control_listen = "127.0.0.1:7999"
        time_scale = 2.0

        [images]
        "registry.campus/train/resnet:1.4" = "sha256:aa"

        [[gpus]]
        index = 0
        model = "A100"
        memory_mib = 40960
        compute_capability = [8, 0]
        "#,
    )
    .unwrap();
    assert_eq!(cfg.agent.coordinator_url, "http://coord:8080");
    assert_eq!(cfg.agent.grace_s, 60);
    assert_eq!(cfg.control_listen.port(), 7999);
    assert_eq!(cfg.gpus[0].memory_mib, 40960);
    assert_eq!(cfg.images.len(), 1);
    assert!(DaemonConfig::from_toml("state_dir = 3").is_err());
}
