//! Discrete-event churn simulator driving the real coordinator and agents
//! under a synthetic interruption trace.

mod config;
mod engine;
mod ledger;
mod oracle;
mod report;
mod storage;
mod trace;

pub use config::{DurationDist, DurationDistribution, InvalidConfig, KindMix, SimConfig, SimNode, SimWorkload, RATE_RANGE};
pub use engine::{Displacement, JobMeta, Observations, Run, TraceRow, Transfer};
pub use ledger::{DisplacementOutcome, JobLedger, Segment};
pub use oracle::{expected_interruptions, return_probability, workload_oracle, WorkloadOracle};
pub use report::{bandwidth_share, overhead_pct, peak_share, trace_csv, ClusterReport, JobReport, KindSummary, SimReport, BANDWIDTH_WINDOW_MS};
pub use storage::{Reachability, StorageView};
pub use trace::{generate_trace, sim_node_id};

use crate::domain::{sha256_hex, SECOND};
use engine::PolicyChoice;

#[derive(Debug, Clone)]
pub struct SimRun {
    pub report: SimReport,
    pub trace_csv: String,
    pub ledgers: Vec<JobLedger>,
}

/// Runs the scoring scheduler. When every workload names an owner, the
/// static-ownership baseline runs too and its utilization is reported.
pub fn run(config: &SimConfig) -> Result<SimRun, InvalidConfig> {
    let (obs, rows) = engine::simulate(config, PolicyChoice::Scoring)?;
    let csv = trace_csv(&rows);
    let (ledgers, outcomes) = ledger::build(&obs);
    let mut report = report::assemble(
        config.seed,
        config.sim_duration_s * SECOND,
        config.campus_bandwidth_mbps,
        &obs,
        &ledgers,
        outcomes,
        sha256_hex(csv.as_bytes()),
    );
    if !config.workloads.is_empty() && config.workloads.iter().all(|w| w.owner.is_some()) {
        report.cluster.baseline_utilization_pct = Some(run_baseline(config)?);
    }
    Ok(SimRun { report, trace_csv: csv, ledgers })
}

/// Utilization under static ownership: each job runs only on its owner.
pub fn run_baseline(config: &SimConfig) -> Result<f64, InvalidConfig> {
    let (obs, _) = engine::simulate(config, PolicyChoice::Ownership)?;
    Ok(report::utilization_pct(&obs, config.sim_duration_s * SECOND))
}
