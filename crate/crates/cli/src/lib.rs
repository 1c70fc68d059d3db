//! `gpunion` command-line interface: job submission, provider node control,
//! cluster inspection, the coordinator server and the churn simulator.

pub mod output;
pub mod render;
mod serve;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gpunion_core::domain::{JobId, JobRecord, JobSpec, NodeId};
use gpunion_core::sim::{self, SimConfig, SimReport};
use gpunion_net::{ApiClient, LocalAgentClient};

use output::{opt, pairs, pct, table, CliError, OutputMode, Printer};

pub use serve::{CoordinatorArgs, JoinArgs};

#[derive(Debug, Parser)]
#[command(name = "gpunion", version, about = "Share idle campus GPUs")]
pub struct Cli {
    /// Coordinator base URL.
    #[arg(long, global = true, env = "GPUNION_COORDINATOR", default_value = "http://127.0.0.1:8080")]
    pub coordinator: String,
    /// Bearer token for operator and job endpoints.
    #[arg(long, global = true, env = "GPUNION_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, short, global = true, value_enum, default_value_t = OutputMode::Human)]
    pub output: OutputMode,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Submit and inspect jobs.
    #[command(subcommand)]
    Job(JobCmd),
    /// Control the provider agent on this machine.
    #[command(subcommand, alias = "agent")]
    Node(NodeCmd),
    /// Cluster-wide views and operator controls.
    #[command(subcommand)]
    Cluster(ClusterCmd),
    /// Run the coordinator.
    #[command(subcommand)]
    Coordinator(CoordinatorCmd),
    /// Run the churn simulator.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Render a simulation report.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
pub enum JobCmd {
    /// Submit a job spec (JSON, or TOML by extension).
    Submit {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
    },
    Status { id: JobId },
    List,
    Cancel { id: JobId },
    Checkpoints { id: JobId },
}

#[derive(Debug, Args)]
pub struct AgentAddr {
    /// Local control endpoint of the agent.
    #[arg(long, env = "GPUNION_AGENT", default_value = "http://127.0.0.1:7071")]
    pub agent: String,
}

#[derive(Debug, Subcommand)]
pub enum NodeCmd {
    /// Register this machine and run the agent in the foreground.
    Join(JoinArgs),
    Status(AgentAddr),
    /// Stop accepting new work; running jobs continue.
    Pause(AgentAddr),
    Resume(AgentAddr),
    /// Checkpoint running jobs and leave the pool.
    Drain {
        #[arg(long)]
        grace: Option<u64>,
        #[command(flatten)]
        addr: AgentAddr,
    },
    /// Terminate all workloads now; returns once they are gone.
    Kill {
        #[arg(long, default_value_t = 0)]
        grace: u64,
        /// Skip the final checkpoint even when the grace allows one.
        #[arg(long)]
        no_checkpoint: bool,
        #[command(flatten)]
        addr: AgentAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClusterCmd {
    Summary,
    Nodes,
    Events {
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    Pause { node: NodeId },
    Resume { node: NodeId },
    Drain {
        node: NodeId,
        #[arg(long)]
        grace: Option<u64>,
    },
    /// Relay the kill switch to a node's agent.
    Kill {
        node: NodeId,
        #[arg(long, default_value_t = 0)]
        grace: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CoordinatorCmd {
    Serve(CoordinatorArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for report.json, trace.csv and plots/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    Run(SimArgs),
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    Render {
        report: PathBuf,
        /// Where to write plots; defaults to `plots/` next to the report.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut p = Printer { mode: cli.output, out, err };
    let api = || ApiClient::new(&cli.coordinator, cli.token.clone());
    let result = match cli.command {
        Command::Job(cmd) => job(cmd, &api(), &mut p),
        Command::Node(cmd) => node(cmd, &cli.coordinator, &mut p),
        Command::Cluster(cmd) => cluster(cmd, &api(), &mut p),
        Command::Coordinator(CoordinatorCmd::Serve(args)) => serve::coordinator(args, cli.token.clone()),
        Command::Sim(SimCmd::Run(args)) => sim_run(&args, &mut p),
        Command::Report(ReportCmd::Render { report, plots }) => report_render(&report, plots, &mut p),
    };
    match result {
        Ok(()) => 0,
        Err(e) => p.fail(&e),
    }
}

pub fn read_spec(path: &Path) -> Result<JobSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid("InvalidSpec", format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::invalid("InvalidSpec", format!("{}: {e}", path.display())))
}

fn job_rows(jobs: &[JobRecord]) -> Vec<Vec<String>> {
    jobs.iter()
        .map(|j| {
            vec![
                j.id.to_string(),
                format!("{:?}", j.state),
                opt(j.allocation.as_ref().map(|a| a.node_id)),
                j.spec.image_ref.clone(),
                j.checkpoints.len().to_string(),
            ]
        })
        .collect()
}

fn job_detail(j: &JobRecord) -> String {
    let gpus = j.allocation.as_ref().map(|a| {
        a.gpu_indices.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    });
    pairs(&[
        ("job", j.id.to_string()),
        ("state", format!("{:?}", j.state)),
        ("image", format!("{} ({})", j.spec.image_ref, j.spec.image_digest)),
        ("node", opt(j.allocation.as_ref().map(|a| a.node_id))),
        ("gpus", opt(gpus)),
        ("displacements", j.displacements.to_string()),
        ("checkpoints", j.checkpoints.len().to_string()),
        ("last checkpoint", opt(j.latest_checkpoint().map(|c| c.seq))),
        ("reason", opt(j.last_reason.as_deref())),
    ])
}

fn job(cmd: JobCmd, api: &ApiClient, p: &mut Printer) -> Result<(), CliError> {
    match cmd {
        JobCmd::Submit { file } => {
            let spec = read_spec(&file)?;
            let job_id = api.submit_job(&spec)?;
            p.emit("job.submit", &gpunion_net::server::JobCreated { job_id }, || format!("submitted job {job_id}"))
        }
        JobCmd::Status { id } => {
            let j = api.job(id)?;
            p.emit("job.status", &j, || job_detail(&j))
        }
        JobCmd::List => {
            let jobs = api.jobs()?;
            p.emit("job.list", &jobs, || table(&["ID", "STATE", "NODE", "IMAGE", "CHECKPOINTS"], &job_rows(&jobs)))
        }
        JobCmd::Cancel { id } => {
            let c = api.cancel_job(id)?;
            p.emit("job.cancel", &c, || format!("cancelled job {} (now {:?})", c.job_id, c.state))
        }
        JobCmd::Checkpoints { id } => {
            let list = api.checkpoints(id)?;
            p.emit("job.checkpoints", &list, || {
                let rows: Vec<Vec<String>> = list
                    .iter()
                    .map(|m| {
                        vec![
                            m.seq.to_string(),
                            if m.is_full() { "full".into() } else { format!("delta of {}", opt(m.parent_seq)) },
                            m.payload_bytes.to_string(),
                            m.created_at.to_string(),
                            m.content_hash.chars().take(12).collect(),
                        ]
                    })
                    .collect();
                table(&["SEQ", "KIND", "BYTES", "CREATED_MS", "HASH"], &rows)
            })
        }
    }
}

fn node(cmd: NodeCmd, coordinator: &str, p: &mut Printer) -> Result<(), CliError> {
    let status_text = |s: &gpunion_net::LocalStatus| {
        pairs(&[
            ("node", s.node_id.to_string()),
            ("advertised", format!("{:?}", s.advertised)),
            ("state", if s.halted { "departed".into() } else if s.departing { "draining".into() } else { "running".into() }),
            ("jobs", s.jobs.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")),
        ])
    };
    match cmd {
        NodeCmd::Join(args) => serve::join(args, coordinator),
        NodeCmd::Status(a) => {
            let s = LocalAgentClient::new(&a.agent).status()?;
            p.emit("node.status", &s, || status_text(&s))
        }
        NodeCmd::Pause(a) => {
            let r = LocalAgentClient::new(&a.agent).pause()?;
            if !r.changed {
                p.warn("node is already paused");
            }
            p.emit("node.pause", &r, || format!("advertised {:?}", r.advertised))
        }
        NodeCmd::Resume(a) => {
            let r = LocalAgentClient::new(&a.agent).resume()?;
            if !r.changed {
                p.warn("node is not paused");
            }
            p.emit("node.resume", &r, || format!("advertised {:?}", r.advertised))
        }
        NodeCmd::Drain { grace, addr } => {
            let s = LocalAgentClient::new(&addr.agent).drain(grace)?;
            p.emit("node.drain", &s, || {
                if s.halted {
                    "departed".to_string()
                } else {
                    format!("draining {} job(s)", s.jobs.len())
                }
            })
        }
        NodeCmd::Kill { grace, no_checkpoint, addr } => {
            let r = LocalAgentClient::new(&addr.agent).kill(grace, !no_checkpoint)?;
            p.emit("node.kill", &r, || {
                let took = r.finished_at.map(|f| f.saturating_sub(r.invoked_at));
                format!("terminated {} workload(s) in {} ms", r.workloads, opt(took))
            })
        }
    }
}

fn cluster(cmd: ClusterCmd, api: &ApiClient, p: &mut Printer) -> Result<(), CliError> {
    match cmd {
        ClusterCmd::Summary => {
            let s = api.summary()?;
            p.emit("cluster.summary", &s, || {
                let by = |m: &std::collections::BTreeMap<String, usize>| {
                    if m.is_empty() {
                        "-".to_string()
                    } else {
                        m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
                    }
                };
                pairs(&[
                    ("nodes", s.nodes_total.to_string()),
                    ("nodes by state", by(&s.nodes_by_state)),
                    ("gpus", format!("{} ({} busy)", s.gpus_total, s.gpus_busy)),
                    ("jobs", s.jobs_total.to_string()),
                    ("jobs by state", by(&s.jobs_by_state)),
                    ("migrations", s.migrations_total.to_string()),
                    ("returns", s.returns_total.to_string()),
                    ("heartbeat misses", s.heartbeat_misses_total.to_string()),
                    ("checkpoint bytes", s.checkpoint_bytes_total.to_string()),
                ])
            })
        }
        ClusterCmd::Nodes => {
            let nodes = api.nodes()?;
            p.emit("cluster.nodes", &nodes, || {
                let rows: Vec<Vec<String>> = nodes
                    .iter()
                    .map(|n| {
                        vec![
                            n.id.to_string(),
                            format!("{:?}", n.state),
                            format!("{}/{}", n.gpus_busy, n.gpus.len()),
                            format!("{:.3}", n.volatility_score),
                            format!("{:.1}", n.latency_ms),
                            n.missed_heartbeats.to_string(),
                        ]
                    })
                    .collect();
                table(&["NODE", "STATE", "BUSY", "VOLATILITY", "LATENCY_MS", "MISSED"], &rows)
            })
        }
        ClusterCmd::Events { since } => {
            let events = api.events(since)?;
            p.emit("cluster.events", &events, || {
                events.iter().map(|e| format!("{:>6}  {:>13}  {}\n", e.seq, e.at, e.payload.name())).collect()
            })
        }
        ClusterCmd::Pause { node } => {
            let o = api.pause(node)?;
            p.emit("cluster.pause", &o, || format!("{node}: {:?}", o.state))
        }
        ClusterCmd::Resume { node } => {
            let o = api.resume(node)?;
            p.emit("cluster.resume", &o, || format!("{node}: {:?}", o.state))
        }
        ClusterCmd::Drain { node, grace } => {
            let plan = api.drain(node, grace)?;
            p.emit("cluster.drain", &plan, || format!("{node}: draining {} job(s)", plan.jobs.len()))
        }
        ClusterCmd::Kill { node, grace } => {
            let k = api.kill(node, grace)?;
            p.emit("cluster.kill", &k, || format!("kill (grace {} s) queued for {node}", k.grace_s))
        }
    }
}

/// Runs a scenario and writes `report.json`, `trace.csv` and `plots/`.
pub fn simulate(args: &SimArgs) -> Result<SimReport, CliError> {
    let mut config = SimConfig::load(&args.config).map_err(|e| CliError::invalid("InvalidConfig", e.0))?;
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    let run = sim::run(&config).map_err(|e| CliError::invalid("InvalidConfig", e.0))?;
    std::fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(args.out.join("report.json"), json + "\n")?;
    std::fs::write(args.out.join("trace.csv"), &run.trace_csv)?;
    render::plots(&run.report, &args.out.join("plots"))?;
    Ok(run.report)
}

fn sim_run(args: &SimArgs, p: &mut Printer) -> Result<(), CliError> {
    let report = simulate(args)?;
    let c = &report.cluster;
    p.emit("sim.run", &report, || {
        pairs(&[
            ("seed", report.seed.to_string()),
            ("jobs completed", format!("{} of {}", c.jobs_completed, report.jobs.len())),
            ("graceful migration success", pct(c.graceful_migration_success_pct)),
            ("return migration", pct(c.return_migration_pct)),
            ("utilization", format!("{:.1}%", c.utilization_pct)),
            ("report", args.out.join("report.json").display().to_string()),
        ])
    })
}

fn report_render(path: &Path, plots: Option<PathBuf>, p: &mut Printer) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid("InvalidReport", format!("{}: {e}", path.display())))?;
    let report: SimReport = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid("InvalidReport", format!("{}: {e}", path.display())))?;
    let dir = plots.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("plots"));
    let written = render::plots(&report, &dir)?;
    let files: Vec<String> = written.iter().map(|f| f.display().to_string()).collect();
    p.emit("report.render", &files, || {
        let mut s = render::tables(&report);
        s += "\nPlots\n";
        for f in &files {
            s += &format!("{f}\n");
        }
        s
    })
}
