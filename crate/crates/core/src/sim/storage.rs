use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use crate::domain::{CheckpointManifest, JobId, NodeId, StorageTarget};
use crate::resilience::{CheckpointStore, MemoryCheckpointStore, StoreError};

/// Which simulated nodes are currently cut off from the network.
#[derive(Debug, Default, Clone)]
pub struct Reachability {
    offline: Arc<RwLock<BTreeSet<NodeId>>>,
}

impl Reachability {
    pub fn set_online(&self, node: NodeId, online: bool) {
        let mut set = self.offline.write().expect("reachability lock");
        if online {
            set.remove(&node);
        } else {
            set.insert(node);
        }
    }

    pub fn is_online(&self, node: NodeId) -> bool {
        !self.offline.read().expect("reachability lock").contains(&node)
    }
}

/// One node's view of simulated storage. An offline node reaches nothing;
/// node-hosted targets need their host online; local targets are private to
/// the node that wrote them.
#[derive(Debug, Clone)]
pub struct StorageView {
    me: NodeId,
    inner: MemoryCheckpointStore,
    reach: Reachability,
}

impl StorageView {
    pub fn new(me: NodeId, inner: MemoryCheckpointStore, reach: Reachability) -> Self {
        Self { me, inner, reach }
    }

    fn resolve(&self, target: &StorageTarget) -> Result<StorageTarget, StoreError> {
        if !self.reach.is_online(self.me) {
            return Err(StoreError::Unavailable(format!("node {} is offline", self.me)));
        }
        match target {
            StorageTarget::SharedFs { .. } => Ok(target.clone()),
            StorageTarget::Node { node, .. } if self.reach.is_online(*node) => Ok(target.clone()),
            StorageTarget::Node { node, .. } => Err(StoreError::Unavailable(format!("storage host {node} is offline"))),
            StorageTarget::Local { path } => Ok(StorageTarget::Node { node: self.me, path: path.clone() }),
        }
    }
}

impl CheckpointStore for StorageView {
    fn put(&self, target: &StorageTarget, manifest: &CheckpointManifest, payload: &[u8]) -> Result<(), StoreError> {
        let t = self.resolve(target)?;
        self.inner.put(&t, manifest, payload)
    }

    fn manifests(&self, target: &StorageTarget, job: JobId) -> Result<Vec<CheckpointManifest>, StoreError> {
        let t = self.resolve(target)?;
        self.inner.manifests(&t, job)
    }

    fn payload(&self, target: &StorageTarget, job: JobId, seq: u64) -> Result<Vec<u8>, StoreError> {
        let t = self.resolve(target)?;
        self.inner.payload(&t, job, seq)
    }
}
