//! Long-running commands: the coordinator server and the agent daemon.

use std::fs::OpenOptions;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::Args;
use gpunion_core::agent::JoinError;
use gpunion_core::clock::SystemClock;
use gpunion_core::coordinator::{Coordinator, CoordinatorConfig, FileEventStore};
use gpunion_net::{router, CoordinatorHandle, DaemonConfig, DaemonError, ServeOptions};
use tracing_subscriber::EnvFilter;

use crate::output::CliError;

#[derive(Debug, Args)]
pub struct CoordinatorArgs {
    /// Scheduler settings and image allow-list (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Append-only event log; state is rebuilt from it on start.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    /// Built dashboard bundle served under /ui.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub tick_ms: u64,
}

#[derive(Debug, Args)]
pub struct JoinArgs {
    /// Agent config file (TOML). Without one, `--state-dir` is required.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Local control endpoint address.
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Run simulated workloads this many times faster than wall time.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn filter() -> EnvFilter {
    EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"))
}

/// Runs the coordinator until interrupted. A token, when given, is required
/// on operator and job endpoints.
pub fn coordinator(args: CoordinatorArgs, operator_token: Option<String>) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt().with_env_filter(filter()).with_writer(std::io::stderr).try_init();
    let config = match &args.config {
        Some(p) => CoordinatorConfig::load(p).map_err(|e| CliError::invalid("InvalidConfig", e.0))?,
        None => CoordinatorConfig::default(),
    };
    if config.allow_list.is_empty() {
        tracing::warn!("image allow-list is empty; every job submission will be rejected");
    }
    let clock = Arc::new(SystemClock);
    let coord = match &args.event_log {
        Some(path) => {
            let store = FileEventStore::open(path)?;
            Coordinator::recover(config, clock, Box::new(store))
                .map_err(|e| CliError::invalid("InvalidEventLog", e.to_string()))?
        }
        None => Coordinator::new(config, clock).map_err(|e| CliError::invalid("InvalidConfig", e.0))?,
    };
    let opts = ServeOptions { ui_dir: args.ui_dir.clone(), operator_token };
    runtime()?.block_on(async move {
        let (handle, _) = CoordinatorHandle::spawn(coord, Duration::from_millis(args.tick_ms.max(1)));
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "coordinator listening");
        axum::serve(listener, router(handle, opts))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn daemon_error(e: DaemonError) -> CliError {
    match e {
        DaemonError::Config(m) => CliError::invalid("InvalidConfig", m),
        DaemonError::RuntimeUnavailable(_) => CliError::invalid("RuntimeUnavailable", e.to_string()),
        DaemonError::Join(JoinError::RegistrationRejected(m)) => CliError::invalid("RegistrationRejected", m),
        DaemonError::Join(j) => CliError::Client(gpunion_net::ClientError::Transport(j.to_string())),
        DaemonError::StateDir(io) => CliError::Io(io.to_string()),
    }
}

/// Registers this machine and runs the agent until it departs or is
/// interrupted.
pub fn join(args: JoinArgs, coordinator: &str) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::invalid("InvalidConfig", format!("{}: {e}", p.display())))?;
            DaemonConfig::from_toml(&text).map_err(daemon_error)?
        }
        None => {
            let dir = args.state_dir.clone().ok_or_else(|| CliError::invalid("InvalidConfig", "--state-dir or --config is required"))?;
            DaemonConfig::new(coordinator, dir)
        }
    };
    if let Some(dir) = args.state_dir {
        cfg.agent.state_dir = dir;
    }
    if let Some(addr) = args.listen {
        cfg.control_listen = addr;
    }
    if let Some(scale) = args.time_scale {
        cfg.time_scale = scale;
    }
    std::fs::create_dir_all(&cfg.agent.state_dir)?;
    let log = OpenOptions::new().create(true).append(true).open(cfg.agent.state_dir.join("agent.log"))?;
    let _ = tracing_subscriber::fmt().with_env_filter(filter()).with_ansi(false).with_writer(Mutex::new(log)).try_init();

    runtime()?.block_on(async move {
        let daemon = gpunion_net::start_agent(cfg).await.map_err(daemon_error)?;
        eprintln!("joined as node {}; local control on {}", daemon.node_id, daemon.control_addr);
        tokio::select! {
            _ = daemon.wait() => eprintln!("agent departed"),
            _ = tokio::signal::ctrl_c() => eprintln!("interrupted"),
        }
        Ok(())
    })
}
