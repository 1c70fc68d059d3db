use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{sha256_hex, JobId, JobState, Millis, SECOND};

use super::engine::{Observations, TraceRow, Transfer};
use super::ledger::{DisplacementOutcome, JobLedger};

/// Sliding window for peak backup bandwidth.
pub const BANDWIDTH_WINDOW_MS: Millis = 60 * SECOND;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub job: JobId,
    pub workload: String,
    pub interruptions: u32,
    pub migrations: u32,
    pub lost_work_s: f64,
    pub restore_s: f64,
    pub requeue_s: f64,
    pub total_time_s: Option<f64>,
    pub base_time_s: f64,
    pub overhead_pct: Option<f64>,
    pub final_state: JobState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub displacements: u64,
    pub resolved: u64,
    pub mean_lost_work_s: Option<f64>,
    pub max_lost_work_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub graceful_migration_success_pct: Option<f64>,
    pub graceful_migrations: u64,
    pub return_migration_pct: Option<f64>,
    pub returns: u64,
    pub return_candidates: u64,
    pub mean_lost_work_s: Option<f64>,
    pub backup_bandwidth_share_pct: f64,
    pub utilization_pct: f64,
    pub baseline_utilization_pct: Option<f64>,
    pub jobs_completed: u64,
    pub interruptions_applied: BTreeMap<String, u64>,
    pub interruptions_skipped: u64,
    pub lost_work_by_kind: BTreeMap<String, KindSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub sim_end_s: f64,
    pub jobs: Vec<JobReport>,
    pub cluster: ClusterReport,
    pub displacements: Vec<DisplacementOutcome>,
    pub backup_transfers: Vec<Transfer>,
    pub campus_bandwidth_mbps: u64,
    /// Jobs whose ledger failed the consistency or identity check.
    pub ledger_violations: Vec<JobId>,
    pub trace_digest: String,
}

impl SimReport {
    /// SHA-256 over the canonical JSON of the report.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("report serializes").as_bytes())
    }
}

fn secs(ms: Millis) -> f64 {
    ms as f64 / SECOND as f64
}

/// Overhead of a completed job, in percent of its base time.
pub fn overhead_pct(total_s: f64, base_s: f64) -> f64 {
    (total_s - base_s) / base_s * 100.0
}

/// Peak checkpoint-write traffic over any 60 s window as a percentage of
/// campus bandwidth. Each transfer is spread evenly over its duration;
/// restore reads are not backup traffic.
pub fn bandwidth_share(report: &SimReport) -> f64 {
    peak_share(&report.backup_transfers, report.campus_bandwidth_mbps)
}

pub fn peak_share(transfers: &[Transfer], campus_mbps: u64) -> f64 {
    let transfers: Vec<&Transfer> = transfers.iter().filter(|t| !t.restore).collect();
    if transfers.is_empty() || campus_mbps == 0 {
        return 0.0;
    }
    let end = transfers.iter().map(|t| t.at + t.duration_ms.max(1)).max().unwrap_or(0);
    let buckets = (end / SECOND + 1) as usize;
    let mut per_second = vec![0.0f64; buckets];
    for t in &transfers {
        let dur = t.duration_ms.max(1);
        let rate = t.bytes as f64 / dur as f64;
        let (start, stop) = (t.at, t.at + dur);
        let mut b = start / SECOND;
        while b * SECOND < stop {
            let lo = start.max(b * SECOND);
            let hi = stop.min((b + 1) * SECOND);
            per_second[b as usize] += rate * (hi - lo) as f64;
            b += 1;
        }
    }
    let w = (BANDWIDTH_WINDOW_MS / SECOND) as usize;
    let mut window: f64 = per_second.iter().take(w).sum();
    let mut peak = window;
    for i in w..per_second.len() {
        window += per_second[i] - per_second[i - w];
        peak = peak.max(window);
    }
    let bits_per_s = peak * 8.0 / (w as f64);
    bits_per_s / (campus_mbps as f64 * 1e6) * 100.0
}

/// GPU-busy time over GPU capacity for the configured horizon. A GPU is busy
/// from container launch to container stop.
pub fn utilization_pct(obs: &Observations, horizon: Millis) -> f64 {
    if obs.total_gpus == 0 || horizon == 0 {
        return 0.0;
    }
    let busy: Millis = obs
        .runs
        .values()
        .flatten()
        .map(|r| r.ended.map_or(obs.end, |(at, _)| at).min(horizon).saturating_sub(r.launched_at))
        .sum();
    busy as f64 / (obs.total_gpus * horizon) as f64 * 100.0
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub(crate) fn assemble(
    seed: u64,
    horizon: Millis,
    campus_mbps: u64,
    obs: &Observations,
    ledgers: &[JobLedger],
    outcomes: Vec<DisplacementOutcome>,
    trace_digest: String,
) -> SimReport {
    let jobs: Vec<JobReport> = ledgers
        .iter()
        .map(|l| {
            let total = l.total_ms.map(secs);
            let base = secs(l.base_ms);
            JobReport {
                job: l.job,
                workload: l.workload.clone(),
                interruptions: l.interruptions,
                migrations: l.migrations,
                lost_work_s: secs(l.lost_ms),
                restore_s: secs(l.restore_ms),
                requeue_s: secs(l.requeue_ms),
                total_time_s: total,
                base_time_s: base,
                overhead_pct: total.map(|t| overhead_pct(t, base)),
                final_state: l.final_state,
            }
        })
        .collect();

    let graceful: Vec<&DisplacementOutcome> =
        outcomes.iter().filter(|o| o.kind == "scheduled" && (o.resolved() || o.job_lost)).collect();
    let graceful_ok = graceful.iter().filter(|o| o.lost_ms == Some(0) && !o.job_lost).count();
    // Returns are decided within the affinity window; unresolved
    // displacements at the end of the run are not counted.
    let candidates: Vec<&DisplacementOutcome> = outcomes.iter().filter(|o| o.resolved() || o.job_lost).collect();
    let returns = candidates.iter().filter(|o| o.returned).count();
    let lost: Vec<f64> = outcomes.iter().filter_map(|o| o.lost_ms).map(secs).collect();

    let mut by_kind: BTreeMap<String, (u64, Vec<f64>)> = BTreeMap::new();
    for o in &outcomes {
        let e = by_kind.entry(o.kind.clone()).or_default();
        e.0 += 1;
        if let Some(l) = o.lost_ms {
            e.1.push(secs(l));
        }
    }
    let lost_work_by_kind = by_kind
        .into_iter()
        .map(|(k, (n, v))| {
            let summary = KindSummary {
                displacements: n,
                resolved: v.len() as u64,
                mean_lost_work_s: mean(&v),
                max_lost_work_s: v.iter().copied().reduce(f64::max),
            };
            (k, summary)
        })
        .collect();

    let pct = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64 * 100.0);
    let cluster = ClusterReport {
        graceful_migration_success_pct: pct(graceful_ok, graceful.len()),
        graceful_migrations: graceful.len() as u64,
        return_migration_pct: pct(returns, candidates.len()),
        returns: returns as u64,
        return_candidates: candidates.len() as u64,
        mean_lost_work_s: mean(&lost),
        backup_bandwidth_share_pct: peak_share(&obs.transfers, campus_mbps),
        utilization_pct: utilization_pct(obs, horizon),
        baseline_utilization_pct: None,
        jobs_completed: ledgers.iter().filter(|l| l.final_state == JobState::Completed).count() as u64,
        interruptions_applied: obs.interruptions_applied.clone(),
        interruptions_skipped: obs.interruptions_skipped,
        lost_work_by_kind,
    };
    SimReport {
        seed,
        sim_end_s: secs(obs.end),
        jobs,
        cluster,
        displacements: outcomes,
        backup_transfers: obs.transfers.clone(),
        campus_bandwidth_mbps: campus_mbps,
        ledger_violations: ledgers.iter().filter(|l| !l.consistent || !l.identity_holds()).map(|l| l.job).collect(),
        trace_digest,
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
