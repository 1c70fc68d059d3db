use gpunion_core::domain::{CheckpointMode, JobId, StorageTarget, SECOND};
use gpunion_core::resilience::{
    create_checkpoint, lost_work, payload_bytes, restore, transfer_ms, ChainCursor, CheckpointInput, CheckpointPolicy,
    CheckpointStore, FsCheckpointStore, MemoryCheckpointStore, RestoreError, RestoreModel, WorkloadStateModel,
    MANIFEST_OVERHEAD_BYTES,
};
use proptest::prelude::*;

const JOB: JobId = JobId(42);
const MODEL: WorkloadStateModel = WorkloadStateModel { total_state_bytes: 1 << 30, dirty_fraction: 0.1 };

fn target() -> StorageTarget {
    StorageTarget::SharedFs { path: "/campus/ckpt".into() }
}

/// Writes `n` checkpoints at progress 100 s, 200 s, ... and returns the cursor.
fn write_chain(store: &dyn CheckpointStore, policy: &CheckpointPolicy, n: u64) -> ChainCursor {
    let mut cursor = ChainCursor::default();
    let t = target();
    for i in 1..=n {
        let input = CheckpointInput {
            job_id: JOB,
            target: &t,
            policy,
            model: &MODEL,
            progress_ms: i * 100 * SECOND,
            now: i * 100 * SECOND,
            force_full: false,
        };
        create_checkpoint(&input, &mut cursor, store).unwrap();
    }
    cursor
}

fn incremental(full_every_n: u32) -> CheckpointPolicy {
    CheckpointPolicy { interval_s: 100, mode: CheckpointMode::Incremental, full_every_n }
}

#[test]
fn incremental_chain_restores_latest_progress() {
    let store = MemoryCheckpointStore::new();
    write_chain(&store, &incremental(10), 4);
    let r = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap();
    assert_eq!(r.progress_ms, 400 * SECOND);
    assert_eq!(r.chain.len(), 4);
    assert!(r.chain[0].is_full());
    assert_eq!(r.degraded, None);
    let delta = payload_bytes(CheckpointMode::Incremental, &MODEL);
    assert_eq!(r.transfer_bytes, (1 << 30) + 3 * delta);
}

#[test]
fn full_every_n_starts_a_new_chain() {
    let store = MemoryCheckpointStore::new();
    write_chain(&store, &incremental(3), 7);
    let kinds: Vec<bool> = store.manifests(&target(), JOB).unwrap().iter().map(|m| m.is_full()).collect();
    assert_eq!(kinds, vec![true, false, false, true, false, false, true]);
    let r = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap();
    assert_eq!((r.chain.len(), r.progress_ms), (1, 700 * SECOND));
}

#[test]
fn corrupt_delta_restores_the_verified_prefix() {
    let store = MemoryCheckpointStore::new();
    write_chain(&store, &incremental(10), 5);
    assert!(store.corrupt(&target(), JOB, 3));
    let r = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap();
    assert_eq!(r.progress_ms, 300 * SECOND);
    assert_eq!(r.degraded, Some(RestoreError::HashMismatch { seq: 3 }));
    assert_eq!(r.cursor.max_seq, Some(4));
}

#[test]
fn corrupt_full_checkpoint_fails_restore() {
    let store = MemoryCheckpointStore::new();
    write_chain(&store, &incremental(10), 3);
    store.corrupt(&target(), JOB, 0);
    let err = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap_err();
    assert_eq!(err, RestoreError::HashMismatch { seq: 0 });
}

#[test]
fn missing_payload_is_reported() {
    let store = MemoryCheckpointStore::new();
    write_chain(&store, &incremental(10), 1);
    store.drop_payload(&target(), JOB, 0);
    let err = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap_err();
    assert_eq!(err, RestoreError::PayloadMissing { seq: 0 });
}

#[test]
fn empty_store_has_no_checkpoint() {
    let store = MemoryCheckpointStore::new();
    let err = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap_err();
    assert_eq!(err, RestoreError::NoCheckpoint);
}

#[test]
fn filesystem_store_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let store = FsCheckpointStore::rooted(dir.path());
    write_chain(&store, &incremental(10), 3);
    let r = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap();
    assert_eq!(r.progress_ms, 300 * SECOND);
    let path = dir.path().join("campus/ckpt").join(JOB.to_string()).join("2.ckpt");
    std::fs::write(&path, b"garbage").unwrap();
    let r = restore(&store, &target(), JOB, &RestoreModel::default()).unwrap();
    assert_eq!(r.progress_ms, 200 * SECOND);
}

#[test]
fn restore_cost_is_transfer_plus_overhead() {
    let model = RestoreModel { link_bandwidth_mbps: 1000, restore_overhead_s: 5 };
    // 1 GiB at 1 Gbit/s: 8 589 934 592 bits / 1e6 bits per ms, rounded up.
    assert_eq!(transfer_ms(1 << 30, 1000), 8590);
    assert_eq!(model.restore_cost_ms(1 << 30), 8590 + 5000);
    assert_eq!(model.restore_cost_ms(0), 5000);
}

#[test]
fn delta_size_is_dirty_fraction_plus_manifest() {
    assert_eq!(payload_bytes(CheckpointMode::Full, &MODEL), 1 << 30);
    assert_eq!(payload_bytes(CheckpointMode::Incremental, &MODEL), 107_374_183 + MANIFEST_OVERHEAD_BYTES);
}

#[test]
fn lost_work_is_progress_since_durable_state() {
    assert_eq!(lost_work(900, 600, false), 300);
    assert_eq!(lost_work(900, 600, true), 0);
    assert_eq!(lost_work(500, 600, false), 0);
}

proptest! {
    #[test]
    fn restore_never_goes_past_the_first_bad_link(n in 1u64..15, every in 1u32..6, bad in 0u64..15) {
        let store = MemoryCheckpointStore::new();
        write_chain(&store, &incremental(every), n);
        let bad = bad % n;
        store.corrupt(&target(), JOB, bad);
        let last_full = (0..n).rev().find(|s| s % u64::from(every) == 0).unwrap();
        match restore(&store, &target(), JOB, &RestoreModel::default()) {
            Ok(r) => {
                let expected = if bad >= last_full { bad } else { n };
                prop_assert_eq!(r.progress_ms, expected * 100 * SECOND);
            }
            Err(e) => {
                prop_assert_eq!(bad, last_full);
                prop_assert_eq!(e, RestoreError::HashMismatch { seq: bad });
            }
        }
    }

    #[test]
    fn every_stored_manifest_hash_matches_payload(n in 1u64..12, every in 1u32..5) {
        let store = MemoryCheckpointStore::new();
        write_chain(&store, &incremental(every), n);
        for m in store.manifests(&target(), JOB).unwrap() {
            let bytes = store.payload(&target(), JOB, m.seq).unwrap();
            prop_assert_eq!(gpunion_core::domain::sha256_hex(&bytes), m.content_hash);
        }
    }
}
