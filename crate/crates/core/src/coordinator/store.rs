use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::events::{EventLogEntry, ReplayError};

/// Append-only persistence for the coordinator's event log.
pub trait EventStore: Send {
    fn append(&mut self, entry: &EventLogEntry) -> io::Result<()>;
    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryEventStore {
    pub entries: Vec<EventLogEntry>,
}

impl EventStore for MemoryEventStore {
    fn append(&mut self, entry: &EventLogEntry) -> io::Result<()> {
        self.entries.push(entry.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError> {
        Ok(self.entries.clone())
    }
}

/// In-memory log that stays readable through clones after the coordinator
/// takes ownership of one of them.
#[derive(Debug, Default, Clone)]
pub struct SharedEventStore(Arc<Mutex<Vec<EventLogEntry>>>);

impl SharedEventStore {
    pub fn entries(&self) -> Vec<EventLogEntry> {
        self.0.lock().expect("event store lock").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("event store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EventStore for SharedEventStore {
    fn append(&mut self, entry: &EventLogEntry) -> io::Result<()> {
        self.0.lock().expect("event store lock").push(entry.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError> {
        Ok(self.entries())
    }
}

/// Discards entries.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullEventStore;

impl EventStore for NullEventStore {
    fn append(&mut self, _: &EventLogEntry) -> io::Result<()> {
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError> {
        Ok(Vec::new())
    }
}

/// One JSON object per line.
pub struct FileEventStore {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FileEventStore {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventStore for FileEventStore {
    fn append(&mut self, entry: &EventLogEntry) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ReplayError::CorruptEntry { seq: 0, reason: e.to_string() }),
        };
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ReplayError::CorruptEntry { seq: i as u64 + 1, reason: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: EventLogEntry = serde_json::from_str(&line).map_err(|e| {
                ReplayError::CorruptEntry { seq: i as u64 + 1, reason: format!("line {}: {e}", i + 1) }
            })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}
