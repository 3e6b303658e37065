use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stages::{execute, Stage};
use super::{PipelineConfig, Workspace};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Relative path to sha256 of each input artifact.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub seed: u64,
    pub generator_seed: u64,
    pub created_unix: u64,
    /// In first-run order; a re-run stage replaces its earlier record.
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            config: config.clone(),
            seed: config.seed,
            generator_seed: config.generator.seed,
            created_unix: unix_now(),
            stages: Vec::new(),
        }
    }

    pub fn load(ws: &Workspace) -> Result<Option<Self>> {
        if !ws.exists(MANIFEST_FILE) {
            return Ok(None);
        }
        let m: RunManifest = ws.read_json(MANIFEST_FILE)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "run manifest format {} not supported",
                m.format_version
            )));
        }
        Ok(Some(m))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, ws: &Workspace) -> Result<()> {
        ws.write_json(MANIFEST_FILE, self)
    }

    pub fn record(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|r| r.stage == rec.stage) {
            Some(slot) => *slot = rec,
            None => self.stages.push(rec),
        }
    }

    /// Every output artifact with the hash it had when last written.
    pub fn outputs(&self) -> BTreeMap<&str, &str> {
        self.stages
            .iter()
            .flat_map(|r| r.outputs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .collect()
    }
}

pub(crate) fn hash_files(ws: &Workspace, rels: &[String]) -> Result<BTreeMap<String, String>> {
    rels.iter()
        .map(|r| Ok((r.clone(), sha256_hex(&ws.read_bytes(r)?))))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub matched: Vec<String>,
    /// (path, recorded hash, replayed hash)
    pub mismatched: Vec<(String, String, String)>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-runs every recorded stage into `out` and compares output hashes.
pub fn replay(manifest: &RunManifest, out: &Workspace) -> Result<ReplayReport> {
    if out.exists(MANIFEST_FILE) {
        return Err(Error::Usage(format!(
            "{} already holds a run; replay needs an empty directory",
            out.root().display()
        )));
    }
    for rec in &manifest.stages {
        execute(out, &manifest.config, &rec.stage)?;
    }
    let mut report = ReplayReport::default();
    for (path, want) in manifest.outputs() {
        let got = sha256_hex(&out.read_bytes(path)?);
        if got == want {
            report.matched.push(path.to_string());
        } else {
            report.mismatched.push((path.to_string(), want.to_string(), got));
        }
    }
    Ok(report)
}
