//! Run manifests and artifact persistence. Every run writes a manifest
//! listing its configuration digest, seeds, and one content digest per
//! output file; the manifest digest itself strips wall-clock fields so that
//! two runs of the same configuration are comparable byte-for-byte.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a byte slice.
pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file<P: AsRef<Path>>(path: P) -> Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

/// One output artifact: repo-relative path and content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileRecord {
    /// Record an already-written file.
    pub fn of<P: AsRef<Path>>(path: P) -> Result<FileRecord> {
        let data = fs::read(&path)?;
        Ok(FileRecord {
            path: path.as_ref().to_string_lossy().into_owned(),
            bytes: data.len() as u64,
            sha256: sha256_bytes(&data),
        })
    }

    /// Record an in-memory artifact under a logical name.
    pub fn of_bytes(name: &str, data: &[u8]) -> FileRecord {
        FileRecord {
            path: name.into(),
            bytes: data.len() as u64,
            sha256: sha256_bytes(data),
        }
    }
}

/// One pipeline stage and the artifacts it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub summary: String,
    pub outputs: Vec<FileRecord>,
}

/// Outcome status of one acceptance criterion. Skips are never silent: they
/// carry the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason")]
pub enum CriterionStatus {
    Pass,
    Fail,
    Skipped(String),
}

/// One acceptance criterion's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub status: CriterionStatus,
    pub details: String,
    pub runtime_secs: f64,
}

impl CriterionOutcome {
    pub fn failed(&self) -> bool {
        self.status == CriterionStatus::Fail
    }

    /// The one-line report: `criterion 03 integral-cross-check ... PASS`.
    pub fn line(&self) -> String {
        let status = match &self.status {
            CriterionStatus::Pass => "PASS".to_string(),
            CriterionStatus::Fail => "FAIL".to_string(),
            CriterionStatus::Skipped(reason) => format!("SKIPPED ({reason})"),
        };
        format!(
            "criterion {:02} {:<24} {} [{:.2} s] {}",
            self.id, self.name, status, self.runtime_secs, self.details
        )
    }
}

/// The run manifest: what ran, from which configuration and seed, producing
/// which artifacts, with which acceptance outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
    pub config_sha256: String,
    pub root_seed: u64,
    pub wall_clock_secs: f64,
    pub stages: Vec<StageRecord>,
    pub acceptance: Vec<CriterionOutcome>,
}

impl RunManifest {
    pub fn new(config_sha256: String, root_seed: u64) -> RunManifest {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            tool: "lpmanifold".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix,
            config_sha256,
            root_seed,
            wall_clock_secs: 0.0,
            stages: Vec::new(),
            acceptance: Vec::new(),
        }
    }

    pub fn push_stage(&mut self, name: &str, summary: String, outputs: Vec<FileRecord>) {
        self.stages.push(StageRecord {
            name: name.into(),
            summary,
            outputs,
        });
    }

    /// True unless some criterion failed (skips don't fail the run, they are
    /// reported).
    pub fn all_pass(&self) -> bool {
        !self.acceptance.iter().any(CriterionOutcome::failed)
    }

    /// Digest of the manifest with volatile fields (timestamps, runtimes)
    /// zeroed: two runs of the same configuration and seed must agree here.
    pub fn digest(&self) -> Result<String> {
        let mut frozen = self.clone();
        frozen.created_unix = 0;
        frozen.wall_clock_secs = 0.0;
        for c in &mut frozen.acceptance {
            c.runtime_secs = 0.0;
        }
        let text = serde_json::to_string(&frozen)
            .map_err(|e| Error::Parse(format!("manifest serialize: {e}")))?;
        Ok(sha256_bytes(text.as_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("manifest serialize: {e}")))
    }

    pub fn write_json_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// A time × modes array as CSV with a `t` column, shortest-roundtrip float
/// formatting, one row per grid node.
pub fn matrix_csv(values: ArrayView2<'_, f64>, h: f64, prefix: &str) -> String {
    let mut out = String::new();
    out.push('t');
    for i in 0..values.ncols() {
        out.push_str(&format!(",{prefix}{i}"));
    }
    out.push('\n');
    for (j, row) in values.outer_iter().enumerate() {
        out.push_str(&format!("{}", j as f64 * h));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Write bytes to `dir/name`, creating the directory, and return the record.
/// The record keeps the directory-relative name, so manifests (and their
/// digests) do not depend on where the output tree lives.
pub fn write_artifact(dir: &Path, name: &str, data: &[u8]) -> Result<FileRecord> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(data)?;
    Ok(FileRecord::of_bytes(name, data))
}
