//! Node identity persisted in the agent's state directory: `node_id` holds
//! the hex id, `token` the bearer token.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::RngCore;

use crate::domain::NodeId;

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("agent.log")
    }

    /// Loads the persisted id or creates and stores a fresh one.
    pub fn node_id<R: RngCore + ?Sized>(&self, rng: &mut R) -> io::Result<NodeId> {
        let path = self.root.join("node_id");
        match fs::read_to_string(&path) {
            Ok(text) => text
                .trim()
                .parse()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let id = NodeId::generate(rng);
                fs::write(&path, format!("{id}\n"))?;
                Ok(id)
            }
            Err(e) => Err(e),
        }
    }

    pub fn token(&self) -> io::Result<Option<String>> {
        match fs::read_to_string(self.root.join("token")) {
            Ok(t) if !t.trim().is_empty() => Ok(Some(t.trim().to_string())),
            Ok(_) => Ok(None),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn store_token(&self, token: &str) -> io::Result<()> {
        let path = self.root.join("token");
        fs::write(&path, token)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&path, fs::Permissions::from_mode(0o600))?;
        }
        Ok(())
    }
}
