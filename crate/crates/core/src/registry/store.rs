//! On-disk layout for generated tools.
//!
//! ```text
//! <dir>/index.json
//! <dir>/tools/<name>/v<version>/manifest.json
//! <dir>/tools/<name>/v<version>/tool.py
//! ```
//!
//! Files are written to a temporary name and renamed into place; the index
//! is rewritten last, so a crash mid-registration leaves the previous index
//! intact.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AgentName, FieldSpec, RegistryError};
use crate::kube::VerbCategory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub description: String,
    pub schema: Vec<FieldSpec>,
    pub owner_agent: AgentName,
    pub origin: String,
    pub version: u32,
    pub content_digest: String,
    pub created_at: DateTime<Utc>,
    pub llm_produced: bool,
    pub category: VerbCategory,
    pub tool_variable_name: String,
    /// Run that produced the tool; its artifacts hold the passing verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub version: u32,
    pub content_digest: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct IndexDoc {
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct ToolStore {
    dir: PathBuf,
}

fn fault(e: impl std::fmt::Display) -> RegistryError {
    RegistryError::StorageFault(e.to_string())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RegistryError> {
    let parent = path.parent().ok_or_else(|| fault("path has no parent"))?;
    std::fs::create_dir_all(parent).map_err(fault)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(fault)?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(fault)?;
    tmp.as_file().sync_all().map_err(fault)?;
    tmp.persist(path).map_err(fault)?;
    Ok(())
}

impl ToolStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("tools")).map_err(fault)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn relative_script_path(name: &str, version: u32) -> PathBuf {
        Path::new("tools").join(name).join(format!("v{version}")).join("tool.py")
    }

    fn version_dir(&self, name: &str, version: u32) -> PathBuf {
        self.dir.join("tools").join(name).join(format!("v{version}"))
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>, RegistryError> {
        let path = self.dir.join("index.json");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path).map_err(fault)?;
        let doc: IndexDoc = serde_json::from_str(&text).map_err(fault)?;
        Ok(doc.entries)
    }

    /// Loads every indexed version, oldest first.
    pub fn load_all(&self) -> Result<Vec<(Manifest, String)>, RegistryError> {
        let mut out = Vec::new();
        for entry in self.index()? {
            let dir = self.version_dir(&entry.name, entry.version);
            let manifest: Manifest = serde_json::from_str(
                &std::fs::read_to_string(dir.join("manifest.json")).map_err(fault)?,
            )
            .map_err(fault)?;
            let script = std::fs::read_to_string(dir.join("tool.py")).map_err(fault)?;
            if crate::framed::sha256_hex(script.as_bytes()) != manifest.content_digest {
                return Err(fault(format!("digest mismatch for {} v{}", entry.name, entry.version)));
            }
            out.push((manifest, script));
        }
        Ok(out)
    }

    pub fn persist(&self, manifest: &Manifest, script: &str) -> Result<(), RegistryError> {
        let dir = self.version_dir(&manifest.name, manifest.version);
        write_atomic(&dir.join("tool.py"), script.as_bytes())?;
        let body = serde_json::to_vec_pretty(manifest).map_err(fault)?;
        write_atomic(&dir.join("manifest.json"), &body)?;
        let mut entries = self.index()?;
        entries.retain(|e| !(e.name == manifest.name && e.version == manifest.version));
        entries.push(IndexEntry {
            name: manifest.name.clone(),
            version: manifest.version,
            content_digest: manifest.content_digest.clone(),
        });
        let body = serde_json::to_vec_pretty(&IndexDoc { entries }).map_err(fault)?;
        write_atomic(&self.dir.join("index.json"), &body)
    }
}
