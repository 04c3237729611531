//! On-disk run store: a manifest describing how the records were produced
//! and the per-cycle records themselves, both as JSON. Floating-point values
//! round-trip bit exactly through the shortest-representation encoding.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::assimilation::AssimilationCycleRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecords {
    pub replicate: usize,
    /// Post-spin-up cycles only; `cycle_index` keeps the original numbering.
    pub records: Vec<AssimilationCycleRecord>,
    /// Digest of the simulated truth realization, for pairing checks.
    pub truth_hash: String,
    pub obs_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub name: String,
    pub created: DateTime<Utc>,
    pub seed: u64,
    pub dim: usize,
    pub cycles: usize,
    pub spinup_cycles: usize,
    pub replicates: usize,
    pub lags: usize,
    pub config_digest: String,
    /// Labels of the stored runs, one per scheme variant.
    pub runs: Vec<String>,
}

/// A set of runs over the same simulated world(s), keyed by scheme label.
/// Single-scheme experiments store one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStore {
    pub manifest: RunManifest,
    pub runs: BTreeMap<String, Vec<ReplicateRecords>>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

impl RecordStore {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let records_path = dir.join("records.json");
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;
        let records = serde_json::to_string(&self.runs)?;
        std::fs::write(&records_path, records).map_err(|e| io_err(&records_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RecordStore> {
        let manifest_path = dir.join("manifest.json");
        let records_path = dir.join("records.json");
        let manifest_text =
            std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: RunManifest = serde_json::from_str(&manifest_text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Unsupported(format!(
                "store schema version {} (this build reads {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let records_text =
            std::fs::read_to_string(&records_path).map_err(|e| io_err(&records_path, e))?;
        let runs: BTreeMap<String, Vec<ReplicateRecords>> = serde_json::from_str(&records_text)?;
        Ok(RecordStore { manifest, runs })
    }

    /// The single run of a non-suite store.
    pub fn only_run(&self) -> Result<&[ReplicateRecords]> {
        if self.runs.len() == 1 {
            Ok(self.runs.values().next().unwrap())
        } else {
            Err(Error::Config(format!(
                "store holds {} runs; pick one of: {}",
                self.runs.len(),
                self.manifest.runs.join(", ")
            )))
        }
    }

    pub fn run(&self, label: &str) -> Result<&[ReplicateRecords]> {
        self.runs
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Config(format!(
                    "no run labelled {label}; available: {}",
                    self.manifest.runs.join(", ")
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::State;
    use tempfile::tempdir;

    fn tiny_store() -> RecordStore {
        let rec = AssimilationCycleRecord {
            cycle_index: 3,
            background: State::from_vec(vec![0.1, -0.2]),
            analysis: State::from_vec(vec![0.1 + 1.0 / 3.0, -0.2]),
            increment: State::from_vec(vec![1.0 / 3.0, 0.0]),
            eta_analysis: State::zeros(2),
            eta_background: State::zeros(2),
            departures: vec![],
            solver_stats: None,
        };
        let mut runs = BTreeMap::new();
        runs.insert(
            "run".to_string(),
            vec![ReplicateRecords {
                replicate: 0,
                records: vec![rec],
                truth_hash: "aa".into(),
                obs_hash: "bb".into(),
            }],
        );
        RecordStore {
            manifest: RunManifest {
                schema_version: SCHEMA_VERSION,
                name: "t".into(),
                created: Utc::now(),
                seed: 1,
                dim: 2,
                cycles: 4,
                spinup_cycles: 3,
                replicates: 1,
                lags: 1,
                config_digest: "deadbeef".into(),
                runs: vec!["run".into()],
            },
            runs,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = tiny_store();
        let dir = tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let loaded = RecordStore::load(dir.path()).unwrap();
        assert_eq!(store, loaded);
        // non-representable decimal survives exactly
        let v = loaded.runs["run"][0].records[0].increment[0];
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn future_schema_rejected() {
        let store = tiny_store();
        let dir = tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            RecordStore::load(dir.path()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn missing_store_is_io_error() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            RecordStore::load(&dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
