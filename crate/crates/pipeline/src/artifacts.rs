//! Text artifacts: training-log CSV, evaluation reports and run manifests.
//! All are deterministic functions of their inputs; none carry timestamps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shrewd_core::metrics::MetricsReport;
use shrewd_core::trainer::TrainLog;

use crate::formats::{read_file, FormatError};

pub fn train_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("step,sim,kl,cls,total\n");
    for r in &log.records {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.sim, r.kl, r.cls, r.total));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Whether retrieval used binary codes (Hamming) or embeddings (Manhattan).
    pub binarized: bool,
    pub queries: usize,
    pub database: usize,
    pub k_max: usize,
    pub map: f64,
    /// Queries with no same-class item in the database, left out of `map`.
    pub map_skipped: usize,
    pub mahp: f64,
    /// `mAHP@k` at the standard cutoffs below `k_max`, then at `k_max`.
    pub mahp_at_k: Vec<CutoffScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffScore {
    pub k: usize,
    pub mahp: f64,
}

impl Report {
    pub fn new(m: &MetricsReport, binarized: bool, database: usize) -> Self {
        Self {
            binarized,
            queries: m.per_query.len(),
            database,
            k_max: m.k_max,
            map: m.map,
            map_skipped: m.map_skipped,
            mahp: m.mahp(),
            mahp_at_k: m.mahp_at_k.iter().map(|(&k, &mahp)| CutoffScore { k, mahp }).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }
}

pub fn hp_curve_csv(m: &MetricsReport) -> String {
    let mut out = String::from("k,mean_hp\n");
    for (k, v) in &m.hp_curve {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record for one CLI invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), FormatError> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), FormatError> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest, FormatError> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&read_file(path)?),
    })
}
