//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion outside `KNOWN_INFEASIBLE` fails.

mod support;

use std::collections::BTreeMap;
use std::time::Instant;

use gpunion_core::coordinator::placement::{choose, Candidate};
use gpunion_core::coordinator::replay;
use gpunion_core::domain::{JobId, NodeId, SECOND};
use gpunion_core::resilience::{restore, RestoreModel};
use gpunion_core::sim::{bandwidth_share, return_probability, run, workload_oracle, SimReport};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use support::*;

/// Criteria that cannot hold for every job under the stated calibration.
/// They still run and print their verdict; see the README.
const KNOWN_INFEASIBLE: &[u32] = &[4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn sweep(name: &str, seeds: std::ops::Range<u64>) -> Vec<SimReport> {
    let cfg = scenario(name);
    seeds.map(|s| run(&cfg.clone().with_seed(s)).expect("scenario runs").report).collect()
}

fn failure_detection() -> Verdict {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut early = 0;
    let mut late = 0;
    for _ in 0..200 {
        let onset = rng.random_range(1..500 * SECOND);
        let period = rng.random_range(100..5 * SECOND);
        let offset = rng.random_range(0..period);
        let got = detection_time(onset, offset, period);
        let deadline = onset + 3 * HEARTBEAT;
        early += usize::from(got < deadline);
        late += usize::from(got >= deadline + period);
    }
    verdict(early == 0 && late == 0, format!("200 onsets; early {early}, after first eligible tick {late}"))
}

fn graceful_departure() -> Verdict {
    let start = Instant::now();
    let reports = sweep("campus-mix", 0..50);
    let elapsed = start.elapsed().as_secs_f64();
    let (mut ok, mut total, mut leaked) = (0u64, 0u64, 0u64);
    for r in &reports {
        let pct = r.cluster.graceful_migration_success_pct.unwrap_or(0.0);
        total += r.cluster.graceful_migrations;
        ok += (pct / 100.0 * r.cluster.graceful_migrations as f64).round() as u64;
        leaked += r
            .displacements
            .iter()
            .filter(|d| d.kind == "scheduled" && d.final_checkpoint && d.lost_ms.is_some_and(|l| l > 0))
            .count() as u64;
    }
    let rate = ok as f64 / total.max(1) as f64 * 100.0;
    verdict(
        total > 0 && rate >= 90.0 && leaked == 0 && elapsed < 30.0,
        format!("50 seeds; {ok}/{total} succeeded ({rate:.1}%); {leaked} lost work after a final checkpoint; {elapsed:.1} s"),
    )
}

fn emergency_loss() -> Verdict {
    let cfg = scenario("emergency-loss");
    let interval_ms = cfg.workloads[0].spec.checkpoint_interval_s * SECOND;
    let mut lost = Vec::new();
    let mut seed = 0;
    while lost.len() < 500 {
        let r = run(&cfg.clone().with_seed(seed)).expect("scenario runs").report;
        lost.extend(r.displacements.iter().filter(|d| d.kind == "emergency").filter_map(|d| d.lost_ms));
        seed += 1;
    }
    let max = *lost.iter().max().expect("nonempty");
    let mean_s = lost.iter().sum::<u64>() as f64 / lost.len() as f64 / SECOND as f64;
    let expected = interval_ms as f64 / SECOND as f64 / 2.0;
    verdict(
        max <= interval_ms && (mean_s - expected).abs() <= 0.1 * expected,
        format!("{} interruptions over {seed} seeds; max {} ms (bound {interval_ms}); mean {mean_s:.1} s (target {expected} ± 10%)", lost.len(), max),
    )
}

fn training_time_inflation() -> Verdict {
    let cfg = scenario("calibrated-overhead");
    let rm = RestoreModel { link_bandwidth_mbps: cfg.link_bandwidth_mbps, restore_overhead_s: cfg.restore_overhead_s };
    let oracle = workload_oracle(&cfg.workloads[0], rm, cfg.full_every_n, cfg.heartbeat_interval_s);
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let (mut total, mut bracketed, mut matched) = (0, 0, 0);
    for seed in 0..200 {
        let r = run(&cfg.clone().with_seed(seed)).expect("scenario runs").report;
        for j in &r.jobs {
            let Some(ov) = j.overhead_pct else { continue };
            if !(2..=4).contains(&j.interruptions) {
                continue;
            }
            total += 1;
            bracketed += usize::from((3.0..=7.0).contains(&ov));
            matched += usize::from((ov - oracle.overhead_pct(j.interruptions)).abs() <= 1.0);
            groups.entry(j.interruptions).or_default().push(ov);
        }
    }
    let means: Vec<String> = groups
        .iter()
        .map(|(n, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            format!("n={n}: mean {m:.2}% vs {:.2}% over {}", oracle.overhead_pct(*n), v.len())
        })
        .collect();
    verdict(
        total > 0 && bracketed == total && matched == total,
        format!("{bracketed}/{total} jobs in [3,7]; {matched}/{total} within 1 pt of analytic; {}", means.join("; ")),
    )
}

fn return_migration() -> Verdict {
    let cfg = scenario("return-migration");
    let expected = return_probability(cfg.affinity_window_s as f64, cfg.temporary_duration_dist.mean_s);
    let (mut returns, mut candidates) = (0, 0);
    for s in 0..500 {
        let r = run(&cfg.clone().with_seed(s)).expect("scenario runs").report;
        returns += r.cluster.returns;
        candidates += r.cluster.return_candidates;
    }
    let got = returns as f64 / candidates.max(1) as f64;
    verdict(
        candidates > 0 && (got - expected).abs() <= 0.05,
        format!("500 seeds; {returns}/{candidates} = {got:.3} vs analytic {expected:.3}"),
    )
}

fn bandwidth() -> Verdict {
    let inc = sweep("campus-mix", 0..20);
    let full = sweep("campus-mix-full", 0..20);
    let peak = inc.iter().map(bandwidth_share).fold(0.0, f64::max);
    let not_greater = inc.iter().zip(&full).filter(|(i, f)| bandwidth_share(f) <= bandwidth_share(i)).count();
    let full_min = full.iter().map(bandwidth_share).fold(f64::INFINITY, f64::min);
    verdict(
        peak < 2.0 && not_greater == 0,
        format!("20 seeds; incremental peak {peak:.3}%; full-only min {full_min:.3}%; {not_greater} seeds where full-only was not greater"),
    )
}

fn utilization() -> Verdict {
    let mut worst = f64::INFINITY;
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let r = run(&scenario("ownership-skew").with_seed(seed)).expect("scenario runs").report;
        let base = r.cluster.baseline_utilization_pct.expect("owned workloads");
        let ratio = r.cluster.utilization_pct / base;
        worst = worst.min(ratio);
        lines.push(format!("{:.1}% vs {:.1}%", r.cluster.utilization_pct, base));
    }
    verdict(worst >= 1.5, format!("worst ratio {worst:.2} ({})", lines.join(", ")))
}

fn determinism_and_replay() -> Verdict {
    let cfg = scenario("campus-mix").with_seed(17);
    let a = run(&cfg).expect("runs").report.digest();
    let b = run(&cfg).expect("runs").report.digest();
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let replayed = runner.run(&prop::collection::vec(op(), 1..80), |ops| {
        let mut h = Harness::new();
        for o in &ops {
            h.apply(o);
        }
        let state = replay(h.log.entries()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&state, h.coord.state());
        Ok(())
    });
    verdict(
        a == b && replayed.is_ok(),
        format!("digest stable: {}; replay over 1000 sequences: {}", a == b, replayed.map_or_else(|e| e.to_string(), |_| "identical".into())),
    )
}

fn kill_switch() -> Verdict {
    let mut rig = AgentRig::new(4, 20.0);
    for j in 0..4 {
        rig.launch(j, spec(1024), j as u32);
    }
    rig.clock.set(300 * SECOND);
    rig.agent.link_lost();
    let k = rig.agent.kill_switch(0, true);
    let immediate = k.finished_at.is_some_and(|f| f - k.invoked_at <= SECOND) && rig.agent.runtime().containers().is_empty();

    let mut rig = AgentRig::new(4, 20.0);
    for j in 0..4 {
        rig.launch(j, spec(1024), j as u32);
    }
    let t0 = 300 * SECOND;
    rig.clock.set(t0);
    rig.agent.link_lost();
    rig.agent.kill_switch(60, true);
    rig.run_until(t0 + 60 * SECOND);
    let events = rig.agent.take_events();
    let mut checkpointed = 0;
    let mut ordered = true;
    for j in 0..4 {
        let ck = events.iter().find_map(|e| match e {
            gpunion_core::agent::AgentEvent::CheckpointWritten { job, at, is_final: true, .. } if *job == JobId(j) => Some(*at),
            _ => None,
        });
        let end = events.iter().find_map(|e| match e {
            gpunion_core::agent::AgentEvent::Terminated { job, at, .. } if *job == JobId(j) => Some(*at),
            _ => None,
        });
        let durable = restore(&rig.store, &spec(1024).storage_target, JobId(j), &RestoreModel::default())
            .is_ok_and(|r| r.progress_ms == t0);
        match (ck, end) {
            (Some(c), Some(e)) if durable => {
                checkpointed += 1;
                ordered &= c <= e && e <= t0 + 60 * SECOND;
            }
            _ => ordered = false,
        }
    }
    let graceful = rig.agent.is_halted() && checkpointed == 4 && ordered;
    verdict(
        immediate && graceful,
        format!("grace 0 finished within 1 s: {immediate}; grace 60: {checkpointed}/4 checkpointed before termination"),
    )
}

fn scheduler() -> Verdict {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let single = runner.run(&prop::collection::vec(op(), 1..80), |ops| {
        let mut h = Harness::new();
        for o in &ops {
            h.apply(o);
            if matches!(o, Op::Tick) {
                h.single_allocation_holds().map_err(TestCaseError::fail)?;
            }
        }
        h.single_allocation_holds().map_err(TestCaseError::fail)
    });

    let mut spread = Vec::new();
    for k in [2usize, 3, 5] {
        for jobs in [k, 2 * k + 1, 4 * k + 2, 7 * k - 1] {
            let c = round_robin_counts(k, jobs);
            spread.push(c.iter().max().unwrap() - c.iter().min().unwrap());
        }
    }
    let rr_ok = spread.iter().all(|d| *d <= 1);

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let strategy = (prop::collection::vec((0.0f64..5.0, 0.1f64..100.0), 1..8), 0.01f64..100.0, 0.0f64..=1.0);
    let invariant = runner.run(&strategy, |(raw, scale, w_v)| {
        let cands: Vec<Candidate> = raw
            .iter()
            .enumerate()
            .map(|(i, &(v, l))| Candidate { node: NodeId::from_u128(i as u128 + 1), gpu_index: 0, volatility: v, latency_ms: l })
            .collect();
        let scaled: Vec<Candidate> = cands.iter().map(|c| Candidate { latency_ms: c.latency_ms * scale, ..*c }).collect();
        prop_assert_eq!(
            choose(&cands, w_v, 1.0 - w_v, None).map(|c| c.node),
            choose(&scaled, w_v, 1.0 - w_v, None).map(|c| c.node)
        );
        Ok(())
    });
    verdict(
        single.is_ok() && rr_ok && invariant.is_ok(),
        format!(
            "single allocation over 1000 scenarios: {}; max round-robin spread {}; scale invariance: {}",
            single.is_ok(),
            spread.iter().max().unwrap(),
            invariant.is_ok()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "failure detection", failure_detection),
        (2, "graceful departure", graceful_departure),
        (3, "emergency loss", emergency_loss),
        (4, "training-time inflation", training_time_inflation),
        (5, "return migration", return_migration),
        (6, "bandwidth", bandwidth),
        (7, "utilization", utilization),
        (8, "determinism and replay", determinism_and_replay),
        (9, "kill switch", kill_switch),
        (10, "scheduler", scheduler),
    ];
    let mut unexpected = Vec::new();
    for (n, name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_INFEASIBLE.contains(&n) { " (known infeasible)" } else { "" };
        println!("criterion {n:>2} {status} {name}{note}: {} [{:.1} s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass && !KNOWN_INFEASIBLE.contains(&n) {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
