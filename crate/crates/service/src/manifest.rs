//! The pipeline manifest: every artifact a stage produced, where it lives,
//! and the content hash it had when recorded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use geomatch::data::io::{read_json, write_json};
use geomatch::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Artifact roles, and the command that produces each.
pub mod role {
    pub const SCHEMA: &str = "schema";
    pub const LOCATIONS: &str = "locations";
    pub const DATASET: &str = "dataset";
    pub const TRUTH: &str = "truth";
    pub const MODELSET: &str = "modelset";
    pub const TUNING: &str = "tuning";
    pub const PREFERENCES: &str = "preferences";
    pub const MATRIX: &str = "matrix";
    pub const MATRIX_SIDECAR: &str = "matrix_sidecar";

    pub fn producer(role: &str) -> &'static str {
        match role {
            SCHEMA | LOCATIONS | DATASET | TRUTH => "generate",
            MODELSET | TUNING | PREFERENCES => "train",
            MATRIX | MATRIX_SIDECAR => "predict",
            _ => "the producing command",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    /// Seconds since the Unix epoch.
    pub recorded_at: u64,
    /// Hashes of the artifacts this one was derived from.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub upstream: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub root_seed: u64,
    /// Stage inputs; verified before any stage consumes them.
    pub artifacts: BTreeMap<String, Artifact>,
    /// Analysis outputs; recorded for provenance only.
    #[serde(default)]
    pub outputs: BTreeMap<String, Artifact>,
    #[serde(skip)]
    dir: PathBuf,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// SHA-256 of a file, or of a directory's regular files in name order
/// (each contributing its name, length and bytes).
pub fn hash_path(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for entry in entries {
            let bytes = fs::read(&entry).map_err(|e| Error::io(&entry, e))?;
            let name = entry.file_name().unwrap_or_default().to_string_lossy().into_owned();
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl PipelineManifest {
    pub fn new(dir: impl Into<PathBuf>, root_seed: u64) -> Self {
        PipelineManifest { root_seed, artifacts: BTreeMap::new(), outputs: BTreeMap::new(), dir: dir.into() }
    }

    /// Read a manifest and verify every recorded artifact.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: PipelineManifest = read_json(path)?;
        m.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for role in m.artifacts.keys() {
            m.verify(role)?;
        }
        Ok(m)
    }

    /// Load the manifest at `path`, or start an empty one there.
    pub fn open_or_new(path: &Path, root_seed: u64) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new(path.parent().map(Path::to_path_buf).unwrap_or_default(), root_seed))
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_json(&self.manifest_path(), self)
    }

    pub fn hash(&self, role: &str) -> Option<&str> {
        self.artifacts.get(role).map(|a| a.sha256.as_str())
    }

    /// Path of a recorded artifact after checking its hash and that its
    /// upstream artifacts have not changed since.
    pub fn verify(&self, role: &str) -> Result<PathBuf> {
        let artifact = self.artifacts.get(role).ok_or_else(|| {
            Error::Config(format!("manifest has no `{role}` artifact; run `geomatch {}` first", role::producer(role)))
        })?;
        let path = self.dir.join(&artifact.path);
        let actual = hash_path(&path)?;
        if actual != artifact.sha256 {
            return Err(Error::Data(format!("artifact `{role}` at {} does not match its recorded hash", path.display())));
        }
        for (up, hash) in &artifact.upstream {
            if self.hash(up) != Some(hash.as_str()) {
                return Err(Error::Data(format!(
                    "artifact `{role}` is stale: `{up}` changed since it was produced; rerun `geomatch {}`",
                    role::producer(role)
                )));
            }
        }
        Ok(path)
    }

    /// Where a stage should write the artifact for `role`.
    pub fn artifact_path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    /// Hash and record an artifact already written under the manifest dir.
    pub fn record(&mut self, role: &str, relative: &str, upstream: &[&str]) -> Result<()> {
        let sha256 = hash_path(&self.dir.join(relative))?;
        let upstream = upstream
            .iter()
            .map(|u| {
                self.hash(u)
                    .map(|h| (u.to_string(), h.to_string()))
                    .ok_or_else(|| Error::Config(format!("cannot record `{role}` before `{u}`")))
            })
            .collect::<Result<_>>()?;
        self.artifacts.insert(role.to_string(), Artifact { path: relative.to_string(), sha256, recorded_at: now(), upstream });
        Ok(())
    }

    /// Record an analysis output at any path.
    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = hash_path(path)?;
        let shown = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().into_owned();
        self.outputs.insert(name.to_string(), Artifact { path: shown, sha256, recorded_at: now(), upstream: BTreeMap::new() });
        Ok(())
    }
}
