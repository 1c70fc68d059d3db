mod support;

use gpunion_core::agent::AgentEvent;
use gpunion_core::coordinator::{DepartureKind, DeparturePhase, Directive, WorkloadPhase};
use gpunion_core::domain::{AdvertisedState, JobId, SECOND};
use gpunion_core::resilience::{restore, RestoreModel};
use support::*;

fn finals(events: &[AgentEvent]) -> Vec<(JobId, u64)> {
    events
        .iter()
        .filter_map(|e| match e {
            AgentEvent::CheckpointWritten { job, at, is_final: true, .. } => Some((*job, *at)),
            _ => None,
        })
        .collect()
}

fn terminations(events: &[AgentEvent]) -> Vec<(JobId, u64)> {
    events
        .iter()
        .filter_map(|e| match e {
            AgentEvent::Terminated { job, at, .. } => Some((*job, *at)),
            _ => None,
        })
        .collect()
}

#[test]
fn kill_with_zero_grace_terminates_everything_at_once() {
    let mut rig = AgentRig::new(4, 20.0);
    for j in 0..4 {
        rig.launch(j, spec(1024), j as u32);
    }
    rig.clock.set(90 * SECOND);
    rig.agent.link_lost();
    let report = rig.agent.kill_switch(0, true);
    assert_eq!(report.workloads, 4);
    assert_eq!(report.finished_at, Some(report.invoked_at));
    assert!(rig.agent.is_halted());
    assert!(rig.agent.runtime().containers().is_empty());
    let events = rig.agent.take_events();
    assert_eq!(terminations(&events).len(), 4);
    assert!(finals(&events).is_empty());
    let notice = rig.agent.take_notice().expect("completion notice queued");
    assert_eq!((notice.kind, notice.phase), (DepartureKind::Emergency, DeparturePhase::Completed));
}

#[test]
fn kill_with_grace_checkpoints_then_terminates() {
    let mut rig = AgentRig::new(3, 20.0);
    for j in 0..3 {
        rig.launch(j, spec(1024), j as u32);
    }
    let t0 = 120 * SECOND;
    rig.clock.set(t0);
    rig.agent.link_lost();
    let report = rig.agent.kill_switch(60, true);
    assert_eq!(report.finished_at, None);
    rig.run_until(t0 + 60 * SECOND);
    assert!(rig.agent.is_halted());
    let events = rig.agent.take_events();
    let ckpts = finals(&events);
    let ends = terminations(&events);
    assert_eq!(ckpts.len(), 3);
    for (job, at) in &ckpts {
        assert_eq!(*at, t0 + 20 * SECOND);
        let end = ends.iter().find(|(j, _)| j == job).expect("terminated").1;
        assert!(end >= *at && end <= t0 + 60 * SECOND);
        let r = restore(&rig.store, &spec(1024).storage_target, *job, &RestoreModel::default()).unwrap();
        assert_eq!(r.progress_ms, t0);
    }
    let notice = rig.agent.take_notice().expect("completion notice queued");
    assert_eq!(notice.kind, DepartureKind::Graceful);
    assert_eq!(notice.checkpoints.len(), 3);
}

#[test]
fn checkpoint_longer_than_grace_is_cut_off_at_the_deadline() {
    let mut rig = AgentRig::new(1, 90.0);
    rig.launch(0, spec(1024), 0);
    rig.clock.set(30 * SECOND);
    rig.agent.kill_switch(60, true);
    rig.run_until(200 * SECOND);
    let events = rig.agent.take_events();
    assert!(finals(&events).is_empty());
    assert_eq!(terminations(&events), vec![(JobId(0), 90 * SECOND)]);
}

#[test]
fn periodic_checkpoints_follow_progress() {
    let mut rig = AgentRig::new(1, 5.0);
    let mut s = spec(1024);
    s.checkpoint_interval_s = 100;
    s.estimated_duration_s = 1000;
    rig.launch(7, s.clone(), 0);
    rig.run_until(350 * SECOND);
    let written: Vec<u64> = rig
        .agent
        .take_events()
        .iter()
        .filter_map(|e| match e {
            AgentEvent::CheckpointWritten { progress_ms, is_final: false, .. } => Some(*progress_ms),
            _ => None,
        })
        .collect();
    assert_eq!(written, vec![100 * SECOND, 200 * SECOND, 300 * SECOND]);
}

#[test]
fn relaunch_restores_from_the_stored_chain() {
    let mut rig = AgentRig::new(1, 5.0);
    let mut s = spec(1024);
    s.checkpoint_interval_s = 100;
    rig.launch(3, s.clone(), 0);
    rig.run_until(250 * SECOND);
    rig.agent.execute_directive(&Directive::Terminate { job_id: JobId(3), grace_s: 0 }).unwrap();
    rig.launch(3, s, 0);
    let launched = rig.agent.take_events().into_iter().rev().find_map(|e| match e {
        AgentEvent::Launched { restored_progress, .. } => Some(restored_progress),
        _ => None,
    });
    assert_eq!(launched, Some(200 * SECOND));
}

#[test]
fn digest_mismatch_fails_the_launch() {
    let mut rig = AgentRig::new(1, 5.0);
    let mut s = spec(1024);
    s.image_digest = format!("sha256:{}", "1".repeat(64));
    let d = Directive::Launch { job_id: JobId(1), spec: s, gpu_indices: vec![0], restore_from: None };
    assert!(rig.agent.execute_directive(&d).is_err());
    let hb = rig.agent.build_heartbeat().unwrap();
    assert_eq!(hb.workloads.len(), 1);
    assert_eq!(hb.workloads[0].phase, WorkloadPhase::Exited { code: 125 });
}

#[test]
fn pause_is_refused_while_draining() {
    let mut rig = AgentRig::new(1, 5.0);
    rig.launch(0, spec(1024), 0);
    assert_eq!(rig.agent.pause(), Ok(true));
    assert_eq!(rig.agent.advertised(), AdvertisedState::Paused);
    assert_eq!(rig.agent.resume(), Ok(true));
    rig.agent.drain(60);
    assert!(rig.agent.pause().is_err());
}

#[test]
fn halted_agent_sends_no_heartbeats() {
    let mut rig = AgentRig::new(1, 5.0);
    assert!(rig.agent.build_heartbeat().is_some());
    rig.agent.kill_switch(0, false);
    assert!(rig.agent.build_heartbeat().is_none());
}
