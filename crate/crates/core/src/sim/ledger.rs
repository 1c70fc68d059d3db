//! Per-job time ledger reconstructed from observed container runs.
//!
//! A job's wall time from its first progress to its completion splits into
//! progress segments and the gaps between them. Progress segments sum to the
//! base duration plus redone work; gaps split into restore and requeue time.

use serde::{Deserialize, Serialize};

use crate::domain::{JobId, JobState, Millis, NodeId};
use crate::resilience::lost_work;

use super::engine::{Displacement, Observations, Run};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub node: NodeId,
    pub start: Millis,
    pub end: Option<Millis>,
    pub progress_start: Millis,
    pub progress_end: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobLedger {
    pub job: JobId,
    pub workload: String,
    pub base_ms: Millis,
    pub interruptions: u32,
    pub migrations: u32,
    pub lost_ms: Millis,
    pub restore_ms: Millis,
    pub requeue_ms: Millis,
    /// First progress to completion; `None` if the job did not complete.
    pub total_ms: Option<Millis>,
    pub final_state: JobState,
    pub segments: Vec<Segment>,
    /// Observed timings were internally consistent.
    pub consistent: bool,
}

impl JobLedger {
    /// `base + lost + restore + requeue == total`.
    pub fn identity_holds(&self) -> bool {
        self.total_ms.is_none_or(|t| self.base_ms + self.lost_ms + self.restore_ms + self.requeue_ms == t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementOutcome {
    pub job: JobId,
    pub from: NodeId,
    pub kind: String,
    pub at: Millis,
    pub interruption_at: Option<Millis>,
    pub returned: bool,
    /// When the job made progress again, if it did.
    pub resumed_at: Option<Millis>,
    pub lost_ms: Option<Millis>,
    pub restore_ms: Millis,
    pub requeue_ms: Millis,
    pub final_checkpoint: bool,
    pub job_lost: bool,
}

impl DisplacementOutcome {
    pub fn resolved(&self) -> bool {
        self.resumed_at.is_some()
    }
}

/// Effective bounds of one run before cutting: progress start time, end time
/// and progress at the end.
fn bounds(run: &Run) -> (Millis, Option<(Millis, Millis)>) {
    match run.ended {
        Some((at, _)) if at <= run.progress_from => (at, Some((at, run.restored_progress))),
        Some((at, p)) if run.exited_ok => (run.progress_from, Some((at, p))),
        Some((_, p)) => {
            let s = run.progress_from;
            (s, Some((s + p.saturating_sub(run.restored_progress), p)))
        }
        None => (run.progress_from, None),
    }
}

pub fn build(obs: &Observations) -> (Vec<JobLedger>, Vec<DisplacementOutcome>) {
    let mut outcomes: Vec<DisplacementOutcome> = obs
        .displacements
        .iter()
        .map(|d| DisplacementOutcome {
            job: d.job,
            from: d.from,
            kind: d.kind.clone(),
            at: d.at,
            interruption_at: d.interruption_at,
            returned: d.completed.is_some_and(|(_, r)| r),
            resumed_at: None,
            lost_ms: None,
            restore_ms: 0,
            requeue_ms: 0,
            final_checkpoint: obs.final_checkpoints.get(&d.job).is_some_and(|ts| {
                ts.iter().any(|&t| d.interruption_at.is_some_and(|i| t >= i) && t <= d.at)
            }),
            job_lost: obs.jobs.get(&d.job).is_some_and(|j| j.final_state == JobState::Lost),
        })
        .collect();

    let mut ledgers = Vec::new();
    for (job, meta) in &obs.jobs {
        let runs: &[Run] = obs.runs.get(job).map_or(&[], Vec::as_slice);
        let mine: Vec<usize> = (0..obs.displacements.len()).filter(|&k| obs.displacements[k].job == *job).collect();
        let mut ledger = JobLedger {
            job: *job,
            workload: meta.workload.clone(),
            base_ms: meta.duration_ms,
            interruptions: mine.len() as u32,
            migrations: mine.iter().filter(|&&k| obs.displacements[k].completed.is_some()).count() as u32,
            lost_ms: 0,
            restore_ms: 0,
            requeue_ms: 0,
            total_ms: None,
            final_state: meta.final_state,
            segments: Vec::new(),
            consistent: true,
        };

        let mut segs: Vec<(Millis, Option<(Millis, Millis)>)> = runs.iter().map(bounds).collect();
        let mut cuts: Vec<Option<usize>> = vec![None; runs.len()];
        for i in 0..runs.len() {
            let next_launch = runs.get(i + 1).map(|r| r.launched_at);
            let window = |d: &Displacement| d.at >= runs[i].launched_at && next_launch.is_none_or(|n| d.at <= n);
            // The job leaves this container at its first displacement from the
            // run's node that was not undone by a grant back to the same
            // container, either through affinity or by adoption.
            let cut = mine.iter().copied().find(|&k| {
                let d = &obs.displacements[k];
                let undone = d.resumed_on == Some(d.from)
                    && d.completed.is_some_and(|(g, _)| next_launch.is_none_or(|n| g < n));
                window(d) && d.from == runs[i].node && !undone
            });
            for &k in &mine {
                let d = &obs.displacements[k];
                if window(d) && Some(k) != cut && d.from == runs[i].node && d.resumed_on == Some(d.from) {
                    if let Some((g, _)) = d.completed.filter(|(g, _)| next_launch.is_none_or(|n| *g < n)) {
                        outcomes[k].resumed_at = Some(g.max(d.at));
                        outcomes[k].lost_ms = Some(0);
                    }
                }
            }
            cuts[i] = cut;
            let Some(next) = next_launch else { continue };
            let (s, end) = segs[i];
            let r = runs[i].restored_progress;
            let cut_at = cut.map_or(next, |k| obs.displacements[k].at);
            segs[i] = match end {
                Some((h, p)) if h <= cut_at => (s, Some((h, p))),
                _ if cut_at <= s => (cut_at, Some((cut_at, r))),
                _ => (s, Some((cut_at, r + (cut_at - s)))),
            };
        }
        for i in 0..runs.len().saturating_sub(1) {
            let next = &runs[i + 1];
            let Some((h, p)) = segs[i].1 else { continue };
            let (s_next, _) = segs[i + 1];
            let lost = lost_work(p, next.restored_progress, false);
            if p < next.restored_progress || s_next < h {
                ledger.consistent = false;
            }
            let gap = s_next.saturating_sub(h);
            let restore = s_next.saturating_sub(next.launched_at.max(h)).min(gap);
            ledger.lost_ms += lost;
            ledger.restore_ms += restore;
            ledger.requeue_ms += gap - restore;
            if let Some(k) = cuts[i] {
                let o = &mut outcomes[k];
                o.resumed_at = Some(s_next);
                o.lost_ms = Some(lost);
                o.restore_ms = restore;
                o.requeue_ms = gap - restore;
            }
        }

        for (run, &(s, end)) in runs.iter().zip(&segs) {
            ledger.segments.push(Segment {
                node: run.node,
                start: s,
                end: end.map(|e| e.0),
                progress_start: run.restored_progress,
                progress_end: end.map(|e| e.1),
            });
        }
        if let (Some(first), Some(last)) = (segs.first(), runs.last()) {
            if let (true, Some((end, p))) = (last.exited_ok, segs.last().and_then(|s| s.1)) {
                let s_last = segs.last().map_or(0, |s| s.0);
                if end - s_last != p - last.restored_progress || p != meta.duration_ms {
                    ledger.consistent = false;
                }
                ledger.total_ms = Some(end - first.0);
            }
        }
        ledgers.push(ledger);
    }
    (ledgers, outcomes)
}
