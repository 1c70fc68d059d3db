use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::domain::{CheckpointManifest, JobId, StorageTarget};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("storage target unavailable: {0}")]
    Unavailable(String),
    #[error("payload missing for job {job} seq {seq}")]
    PayloadMissing { job: JobId, seq: u64 },
    #[error("storage i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

/// Checkpoint persistence addressed by storage target, job and sequence number.
pub trait CheckpointStore: Send + Sync {
    fn put(&self, target: &StorageTarget, manifest: &CheckpointManifest, payload: &[u8]) -> Result<(), StoreError>;
    /// Manifests for `job`, ascending by seq.
    fn manifests(&self, target: &StorageTarget, job: JobId) -> Result<Vec<CheckpointManifest>, StoreError>;
    fn payload(&self, target: &StorageTarget, job: JobId, seq: u64) -> Result<Vec<u8>, StoreError>;
}

pub fn namespace(target: &StorageTarget) -> String {
    match target {
        StorageTarget::SharedFs { path } => format!("shared:{path}"),
        StorageTarget::Node { node, path } => format!("node:{node}:{path}"),
        StorageTarget::Local { path } => format!("local:{path}"),
    }
}

type Key = (String, JobId, u64);

/// In-memory store. Clones share the same contents.
#[derive(Debug, Clone, Default)]
pub struct MemoryCheckpointStore {
    inner: Arc<Mutex<BTreeMap<Key, (CheckpointManifest, Option<Vec<u8>>)>>>,
}

impl MemoryCheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(target: &StorageTarget, job: JobId, seq: u64) -> Key {
        (namespace(target), job, seq)
    }

    /// Flips a byte of a stored payload.
    pub fn corrupt(&self, target: &StorageTarget, job: JobId, seq: u64) -> bool {
        let mut map = self.inner.lock().unwrap();
        match map.get_mut(&Self::key(target, job, seq)).and_then(|(_, p)| p.as_mut()) {
            Some(p) if !p.is_empty() => {
                p[0] ^= 0xff;
                true
            }
            _ => false,
        }
    }

    pub fn drop_payload(&self, target: &StorageTarget, job: JobId, seq: u64) -> bool {
        let mut map = self.inner.lock().unwrap();
        map.get_mut(&Self::key(target, job, seq)).map(|(_, p)| p.take().is_some()).unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CheckpointStore for MemoryCheckpointStore {
    fn put(&self, target: &StorageTarget, manifest: &CheckpointManifest, payload: &[u8]) -> Result<(), StoreError> {
        self.inner
            .lock()
            .unwrap()
            .insert(Self::key(target, manifest.job_id, manifest.seq), (manifest.clone(), Some(payload.to_vec())));
        Ok(())
    }

    fn manifests(&self, target: &StorageTarget, job: JobId) -> Result<Vec<CheckpointManifest>, StoreError> {
        let ns = namespace(target);
        let map = self.inner.lock().unwrap();
        Ok(map
            .range((ns.clone(), job, 0)..=(ns, job, u64::MAX))
            .map(|(_, (m, _))| m.clone())
            .collect())
    }

    fn payload(&self, target: &StorageTarget, job: JobId, seq: u64) -> Result<Vec<u8>, StoreError> {
        self.inner
            .lock()
            .unwrap()
            .get(&Self::key(target, job, seq))
            .and_then(|(_, p)| p.clone())
            .ok_or(StoreError::PayloadMissing { job, seq })
    }
}

/// Filesystem layout: `<root>/<job_id>/<seq>.ckpt` and
/// `<root>/<job_id>/<seq>.manifest.json`, where `<root>` is the target path
/// (optionally re-rooted under a base directory).
#[derive(Debug, Clone, Default)]
pub struct FsCheckpointStore {
    base: Option<PathBuf>,
}

impl FsCheckpointStore {
    pub fn new() -> Self {
        Self { base: None }
    }

    /// Resolves every target path relative to `base`.
    pub fn rooted(base: impl Into<PathBuf>) -> Self {
        Self { base: Some(base.into()) }
    }

    fn job_dir(&self, target: &StorageTarget, job: JobId) -> PathBuf {
        let path = Path::new(target.path());
        let root = match &self.base {
            Some(base) => base.join(path.strip_prefix("/").unwrap_or(path)),
            None => path.to_path_buf(),
        };
        root.join(job.to_string())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl CheckpointStore for FsCheckpointStore {
    fn put(&self, target: &StorageTarget, manifest: &CheckpointManifest, payload: &[u8]) -> Result<(), StoreError> {
        let dir = self.job_dir(target, manifest.job_id);
        fs::create_dir_all(&dir).map_err(|e| StoreError::Unavailable(format!("{}: {e}", dir.display())))?;
        write_atomic(&dir.join(format!("{}.ckpt", manifest.seq)), payload)?;
        let json = serde_json::to_vec_pretty(manifest).map_err(|e| StoreError::Io(e.to_string()))?;
        write_atomic(&dir.join(format!("{}.manifest.json", manifest.seq)), &json)?;
        Ok(())
    }

    fn manifests(&self, target: &StorageTarget, job: JobId) -> Result<Vec<CheckpointManifest>, StoreError> {
        let dir = self.job_dir(target, job);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Unavailable(format!("{}: {e}", dir.display()))),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry?.path();
            let is_manifest = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".manifest.json"));
            if !is_manifest {
                continue;
            }
            // Unreadable manifests are skipped; restore treats them as missing links.
            if let Ok(m) = serde_json::from_slice::<CheckpointManifest>(&fs::read(&path)?) {
                out.push(m);
            }
        }
        out.sort_by_key(|m| m.seq);
        Ok(out)
    }

    fn payload(&self, target: &StorageTarget, job: JobId, seq: u64) -> Result<Vec<u8>, StoreError> {
        let path = self.job_dir(target, job).join(format!("{seq}.ckpt"));
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::PayloadMissing { job, seq }),
            Err(e) => Err(e.into()),
        }
    }
}
