//! Durable per-session checkpoint log.
//!
//! Every engine step persists a [`Checkpoint`] whose `state_blob` is the
//! canonical JSON of the workflow state (object keys sorted, compact), so
//! structural equality of states is byte equality of blobs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framed::{FrameError, FramedLog};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("sequence conflict for session {session}: {seq} is not above latest {latest}")]
    SequenceConflict { session: String, seq: u64, latest: u64 },
    #[error("no checkpoint for session {0:?}")]
    NotFound(String),
    #[error("corrupt state blob: {0}")]
    CorruptBlob(String),
    #[error("checkpoint storage fault: {0}")]
    StorageFault(String),
}

impl From<FrameError> for MemoryError {
    fn from(e: FrameError) -> Self {
        Self::StorageFault(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointCause {
    NodeBoundary,
    Interrupt,
    Completion,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub checkpoint_id: String,
    pub session_id: String,
    pub seq: u64,
    pub node_name: String,
    pub cause: CheckpointCause,
    pub state_blob: String,
    pub created_at: DateTime<Utc>,
}

/// Serializes any value to canonical JSON: sorted keys, no whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String, MemoryError> {
    let v = serde_json::to_value(value).map_err(|e| MemoryError::StorageFault(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| MemoryError::StorageFault(e.to_string()))
}

/// Decodes a checkpoint's state blob.
pub fn restore_state<T: DeserializeOwned>(checkpoint: &Checkpoint) -> Result<T, MemoryError> {
    serde_json::from_str(&checkpoint.state_blob).map_err(|e| MemoryError::CorruptBlob(e.to_string()))
}

pub trait CheckpointStore: Send + Sync {
    fn save(
        &self,
        session_id: &str,
        seq: u64,
        node_name: &str,
        cause: CheckpointCause,
        state_blob: String,
    ) -> Result<String, MemoryError>;

    fn load_latest(&self, session_id: &str) -> Result<Checkpoint, MemoryError>;

    fn list(&self, session_id: &str) -> Result<Vec<Checkpoint>, MemoryError>;

    fn sessions(&self) -> Vec<String>;

    fn healthy(&self) -> bool {
        true
    }
}

/// Shared bookkeeping for both backends.
#[derive(Debug, Default)]
struct Index {
    by_session: HashMap<String, Vec<Checkpoint>>,
}

impl Index {
    fn check_seq(&self, session_id: &str, seq: u64) -> Result<(), MemoryError> {
        if let Some(latest) = self.by_session.get(session_id).and_then(|v| v.last()) {
            if seq <= latest.seq {
                return Err(MemoryError::SequenceConflict {
                    session: session_id.to_string(),
                    seq,
                    latest: latest.seq,
                });
            }
        }
        Ok(())
    }

    fn push(&mut self, cp: Checkpoint) {
        self.by_session.entry(cp.session_id.clone()).or_default().push(cp);
    }

    fn latest(&self, session_id: &str) -> Result<Checkpoint, MemoryError> {
        self.by_session
            .get(session_id)
            .and_then(|v| v.last())
            .cloned()
            .ok_or_else(|| MemoryError::NotFound(session_id.to_string()))
    }

    fn list(&self, session_id: &str) -> Vec<Checkpoint> {
        self.by_session.get(session_id).cloned().unwrap_or_default()
    }

    fn sessions(&self) -> Vec<String> {
        let mut s: Vec<String> = self.by_session.keys().cloned().collect();
        s.sort();
        s
    }
}

fn make(session_id: &str, seq: u64, node_name: &str, cause: CheckpointCause, state_blob: String) -> Checkpoint {
    Checkpoint {
        checkpoint_id: uuid::Uuid::new_v4().to_string(),
        session_id: session_id.to_string(),
        seq,
        node_name: node_name.to_string(),
        cause,
        state_blob,
        created_at: Utc::now(),
    }
}

#[derive(Debug, Default)]
pub struct MemoryCheckpointStore {
    index: RwLock<Index>,
}

impl MemoryCheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CheckpointStore for MemoryCheckpointStore {
    fn save(
        &self,
        session_id: &str,
        seq: u64,
        node_name: &str,
        cause: CheckpointCause,
        state_blob: String,
    ) -> Result<String, MemoryError> {
        let mut index = self.index.write();
        index.check_seq(session_id, seq)?;
        let cp = make(session_id, seq, node_name, cause, state_blob);
        let id = cp.checkpoint_id.clone();
        index.push(cp);
        Ok(id)
    }

    fn load_latest(&self, session_id: &str) -> Result<Checkpoint, MemoryError> {
        self.index.read().latest(session_id)
    }

    fn list(&self, session_id: &str) -> Result<Vec<Checkpoint>, MemoryError> {
        Ok(self.index.read().list(session_id))
    }

    fn sessions(&self) -> Vec<String> {
        self.index.read().sessions()
    }
}

/// Append-only file log; one framed record per line.
#[derive(Debug)]
pub struct FileCheckpointStore {
    log: FramedLog,
    index: RwLock<Index>,
}

impl FileCheckpointStore {
    /// Opens the log, dropping a torn final record left by a crash.
    pub fn open(path: &Path) -> Result<Self, MemoryError> {
        let (log, lines) = FramedLog::open(path, true)?;
        let mut index = Index::default();
        for line in lines {
            let cp: Checkpoint = serde_json::from_str(&line)
                .map_err(|e| MemoryError::StorageFault(format!("undecodable checkpoint: {e}")))?;
            index.check_seq(&cp.session_id, cp.seq)?;
            index.push(cp);
        }
        Ok(Self {
            log,
            index: RwLock::new(index),
        })
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }
}

impl CheckpointStore for FileCheckpointStore {
    fn save(
        &self,
        session_id: &str,
        seq: u64,
        node_name: &str,
        cause: CheckpointCause,
        state_blob: String,
    ) -> Result<String, MemoryError> {
        let mut index = self.index.write();
        index.check_seq(session_id, seq)?;
        let cp = make(session_id, seq, node_name, cause, state_blob);
        self.log.append(&canonical_json(&cp)?)?;
        let id = cp.checkpoint_id.clone();
        index.push(cp);
        Ok(id)
    }

    fn load_latest(&self, session_id: &str) -> Result<Checkpoint, MemoryError> {
        self.index.read().latest(session_id)
    }

    fn list(&self, session_id: &str) -> Result<Vec<Checkpoint>, MemoryError> {
        Ok(self.index.read().list(session_id))
    }

    fn sessions(&self) -> Vec<String> {
        self.index.read().sessions()
    }

    fn healthy(&self) -> bool {
        self.log.writable()
    }
}

/// Groups checkpoints per session; handy for replay tooling.
pub fn group_by_session(store: &dyn CheckpointStore) -> Result<BTreeMap<String, Vec<Checkpoint>>, MemoryError> {
    let mut out = BTreeMap::new();
    for s in store.sessions() {
        out.insert(s.clone(), store.list(&s)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn exercise(store: &dyn CheckpointStore) {
        assert_eq!(store.list("nobody").unwrap(), vec![]);
        assert_eq!(store.load_latest("nobody"), Err(MemoryError::NotFound("nobody".into())));
        store.save("a", 0, "start", CheckpointCause::NodeBoundary, "{}".into()).unwrap();
        assert_eq!(store.load_latest("a").unwrap().seq, 0);
        store.save("a", 7, "x", CheckpointCause::NodeBoundary, "{}".into()).unwrap();
        assert!(matches!(
            store.save("a", 5, "x", CheckpointCause::NodeBoundary, "{}".into()),
            Err(MemoryError::SequenceConflict { latest: 7, .. })
        ));
        assert!(matches!(
            store.save("a", 7, "x", CheckpointCause::NodeBoundary, "{}".into()),
            Err(MemoryError::SequenceConflict { .. })
        ));
        store.save("b", 1, "y", CheckpointCause::Completion, "[1]".into()).unwrap();
        assert_eq!(store.list("a").unwrap().len(), 2);
        assert_eq!(store.list("b").unwrap()[0].state_blob, "[1]");
        assert_eq!(store.sessions(), vec!["a", "b"]);
    }

    #[test]
    fn memory_backend() {
        exercise(&MemoryCheckpointStore::new());
    }

    #[test]
    fn file_backend_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.log");
        let before = {
            let store = FileCheckpointStore::open(&path).unwrap();
            exercise(&store);
            group_by_session(&store).unwrap()
        };
        let store = FileCheckpointStore::open(&path).unwrap();
        assert_eq!(group_by_session(&store).unwrap(), before);
    }

    #[test]
    fn torn_write_is_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.log");
        {
            let store = FileCheckpointStore::open(&path).unwrap();
            store.save("s", 0, "a", CheckpointCause::NodeBoundary, "{\"n\":0}".into()).unwrap();
            store.save("s", 1, "b", CheckpointCause::NodeBoundary, "{\"n\":1}".into()).unwrap();
        }
        // Simulate a crash halfway through the third record.
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"812 deadbeef {\"session_id\":\"s\",\"se").unwrap();
        drop(f);
        let store = FileCheckpointStore::open(&path).unwrap();
        assert_eq!(store.load_latest("s").unwrap().seq, 1);
        store.save("s", 2, "c", CheckpointCause::Completion, "{}".into()).unwrap();
        let reopened = FileCheckpointStore::open(&path).unwrap();
        assert_eq!(reopened.list("s").unwrap().len(), 3);
    }

    #[test]
    fn corrupt_blob() {
        let mut cp = make("s", 0, "n", CheckpointCause::Failure, "{\"a\":".into());
        assert!(matches!(restore_state::<serde_json::Value>(&cp), Err(MemoryError::CorruptBlob(_))));
        cp.state_blob = "{\"b\":1,\"a\":2}".into();
        let v: serde_json::Value = restore_state(&cp).unwrap();
        assert_eq!(canonical_json(&v).unwrap(), "{\"a\":2,\"b\":1}");
    }
}
