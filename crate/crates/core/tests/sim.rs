mod support;

use gpunion_core::domain::{InterruptionKind, JobState};
use gpunion_core::resilience::RestoreModel;
use gpunion_core::sim::{generate_trace, return_probability, run, workload_oracle, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp};
use support::scenario;

#[test]
fn same_seed_same_digest() {
    let cfg = scenario("calibrated-overhead").with_seed(5);
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.report.digest(), b.report.digest());
    assert_eq!(a.trace_csv, b.trace_csv);
    let c = run(&cfg.with_seed(6)).unwrap();
    assert_ne!(a.report.trace_digest, c.report.trace_digest);
}

#[test]
fn interruption_counts_follow_the_configured_rate() {
    let mut cfg = scenario("emergency-loss");
    cfg.sim_duration_s = 7 * 86_400;
    cfg.interruption_rates = vec![3.2, 0.0, 0.0, 0.0];
    let seeds = 2000;
    let mut total = 0usize;
    for s in 0..seeds {
        total += generate_trace(&cfg.clone().with_seed(s)).unwrap().len();
    }
    let mean = total as f64 / seeds as f64;
    // 3.2 per day over a week; the sample mean's standard error is ~0.11.
    assert!((mean - 22.4).abs() < 0.5, "mean {mean}");
}

#[test]
fn zero_rate_node_has_no_interruptions() {
    let mut cfg = scenario("emergency-loss");
    cfg.interruption_rates = vec![0.0; cfg.nodes.len()];
    assert!(generate_trace(&cfg).unwrap().is_empty());
}

#[test]
fn temporary_outages_carry_a_duration() {
    let cfg = scenario("return-migration");
    let trace = generate_trace(&cfg).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.iter().all(|e| matches!(e.kind, InterruptionKind::TemporaryUnavailability { duration_s } if duration_s >= 1)));
    assert!(trace.windows(2).all(|w| w[0].at <= w[1].at));
}

#[test]
fn no_interruptions_means_no_overhead() {
    let mut cfg = scenario("calibrated-overhead");
    cfg.interruption_rates = vec![0.0; cfg.nodes.len()];
    let r = run(&cfg).unwrap().report;
    assert_eq!(r.jobs.len(), 2);
    for j in &r.jobs {
        assert_eq!(j.final_state, JobState::Completed);
        assert_eq!(j.interruptions, 0);
        assert_eq!(j.overhead_pct, Some(0.0));
    }
    assert!(r.displacements.is_empty());
}

#[test]
fn empty_workload_has_zero_utilization() {
    let mut cfg = scenario("ownership-skew");
    cfg.workloads.clear();
    cfg.sim_duration_s = 86_400;
    let r = run(&cfg).unwrap().report;
    assert_eq!(r.cluster.utilization_pct, 0.0);
    assert!(r.jobs.is_empty());
}

#[test]
fn ledger_identity_holds_on_a_busy_scenario() {
    for seed in [1, 2, 3] {
        let out = run(&scenario("campus-mix").with_seed(seed)).unwrap();
        assert!(out.report.ledger_violations.is_empty(), "seed {seed}: {:?}", out.report.ledger_violations);
        for l in &out.ledgers {
            if let Some(total) = l.total_ms {
                assert_eq!(l.base_ms + l.lost_ms + l.restore_ms + l.requeue_ms, total, "job {}", l.job);
            }
        }
    }
}

#[test]
fn trace_csv_has_a_header_and_one_row_per_event() {
    let out = run(&scenario("calibrated-overhead")).unwrap();
    let mut lines = out.trace_csv.lines();
    assert_eq!(lines.next(), Some("t_ms,source,node,job,event,detail"));
    assert!(lines.count() > 10);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = scenario("emergency-loss");
    let mut c = base.clone();
    c.interruption_rates[0] = 5.0;
    assert!(run(&c).is_err());
    c.allow_any_rate = true;
    assert!(run(&c).is_ok());

    let mut c = base.clone();
    c.interruption_rates.pop();
    assert!(run(&c).is_err());

    let mut c = base.clone();
    c.kind_mix.emergency = 0.5;
    assert!(run(&c).is_err());

    let mut c = base.clone();
    c.nodes[1].name = c.nodes[0].name.clone();
    assert!(run(&c).is_err());

    assert!(SimConfig::from_toml("seed = \"x\"").is_err());
}

#[test]
fn return_probability_matches_sampled_outages() {
    let (window, mean) = (1800.0, 1638.6);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let exp = Exp::new(1.0 / mean).unwrap();
    let n = 200_000;
    let hits = (0..n).filter(|_| exp.sample(&mut rng) <= window).count();
    let sampled = hits as f64 / n as f64;
    assert!((return_probability(window, mean) - sampled).abs() < 0.005);
    assert!((return_probability(window, mean) - 0.667).abs() < 0.001);
}

#[test]
fn workload_oracle_on_the_calibrated_scenario() {
    let cfg = scenario("calibrated-overhead");
    let rm = RestoreModel { link_bandwidth_mbps: cfg.link_bandwidth_mbps, restore_overhead_s: cfg.restore_overhead_s };
    let o = workload_oracle(&cfg.workloads[0], rm, cfg.full_every_n, cfg.heartbeat_interval_s);
    // Chain positions 0..9 over a 1 Gbit/s link: 28 GB full plus k deltas
    // of 2.8 GB and 4 KiB of manifest each, plus 5 s of fixed overhead.
    let mut restore_s = 0.0;
    for k in 0..10u64 {
        let bits = (28_000_000_000u64 + k * (2_800_000_000 + 4096)) * 8;
        restore_s += (bits as f64 / 1e9 * 1000.0).ceil() / 1000.0 + 5.0;
    }
    restore_s /= 10.0;
    assert!((o.expected_lost_s - 144.0).abs() < 1e-9);
    assert!((o.expected_requeue_s - 5.0).abs() < 1e-9);
    assert!((o.expected_restore_s - restore_s).abs() < 1e-6, "{} vs {restore_s}", o.expected_restore_s);
    let per = 144.0 + 5.0 + restore_s;
    assert!((o.overhead_pct(3) - 3.0 * per / 28_800.0 * 100.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_seed_keeps_the_ledger_identity(seed in any::<u64>()) {
        let out = run(&scenario("calibrated-overhead").with_seed(seed)).unwrap();
        prop_assert!(out.report.ledger_violations.is_empty());
        for j in &out.report.jobs {
            if let Some(ov) = j.overhead_pct {
                prop_assert!(ov >= 0.0);
            }
            prop_assert!(j.lost_work_s <= f64::from(j.interruptions) * 288.0 + 1e-9);
        }
    }
}
