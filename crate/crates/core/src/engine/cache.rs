//! Content-addressed store of completed worker reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TaskUnit, WorkerReport};
use crate::canonical::fingerprint;

/// Environment variable overriding the default cache root.
pub const CACHE_DIR_ENV: &str = "EKA_CACHE_DIR";
const SCHEMA_VERSION: u32 = 1;

/// Hash of everything that can change a unit's scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(unit: &TaskUnit, prompt_fingerprint: &str, dataset_version: &str) -> Self {
        Self(fingerprint(&serde_json::json!({
            "schema": SCHEMA_VERSION,
            "model": unit.model,
            "spec": unit.spec_name,
            "evaluation_function": unit.evaluation_function,
            "task_args": unit.task_args,
            "prompt": prompt_fingerprint,
            "dataset": dataset_version,
            "language": unit.language,
            "shard": unit.shard,
        })))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    schema_version: u32,
    report: WorkerReport,
}

/// One `<key>.report` file per entry. Writes go through a temporary file
/// and a rename, so concurrent writers never expose partial entries.
#[derive(Debug, Clone)]
pub struct ReportCache {
    root: PathBuf,
}

impl ReportCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$EKA_CACHE_DIR`, else `$XDG_CACHE_HOME/evalkit`, else
    /// `$HOME/.cache/evalkit`, else `.evalkit-cache`.
    pub fn default_root() -> PathBuf {
        let env = |k: &str| std::env::var_os(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        env(CACHE_DIR_ENV)
            .or_else(|| env("XDG_CACHE_HOME").map(|p| p.join("evalkit")))
            .or_else(|| env("HOME").map(|p| p.join(".cache").join("evalkit")))
            .unwrap_or_else(|| PathBuf::from(".evalkit-cache"))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{key}.report"))
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<WorkerReport> {
        let path = self.path_for(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.schema_version == SCHEMA_VERSION => Some(entry.report),
            Ok(entry) => {
                log::warn!("ignoring cache entry {} with schema {}", path.display(), entry.schema_version);
                None
            }
            Err(err) => {
                log::warn!("ignoring corrupt cache entry {}: {err}", path.display());
                None
            }
        }
    }

    pub fn store(&self, key: &CacheKey, report: &WorkerReport) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.root)?;
        let entry = Entry { schema_version: SCHEMA_VERSION, report: report.clone() };
        let bytes = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RecordScore, Shard, UnitStatus};
    use crate::model::ModelDescriptor;
    use crate::spec::TaskArgs;
    use serde_json::json;

    fn unit() -> TaskUnit {
        let args: TaskArgs = serde_json::from_value(json!({
            "dataset_name": "d", "dataset_split": "s", "num_few_shot": 0,
            "prompt_template_name_zeroshot": "t",
            "prompt_file_benchmark_key": "k", "prompt_file_category": "c"
        }))
        .unwrap();
        TaskUnit::new(ModelDescriptor::local("m"), "S", "core.exact_match.evaluate", args, "", Shard::single())
    }

    fn report() -> WorkerReport {
        WorkerReport {
            unit_id: "u".into(),
            scores: vec![RecordScore { record_id: "r".into(), metric: "accuracy".into(), value: 0.1 + 0.2 }],
            evaluated: 1,
            skipped: 0,
            failed: 0,
            issues: vec![],
            effective_batch_size: 8,
            wall_time_ms: 12,
            cache_hit: false,
            status: UnitStatus::Completed,
            dataset_version: "dv".into(),
            prompt_fingerprint: "pf".into(),
        }
    }

    #[test]
    fn store_then_lookup_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::new(dir.path());
        let key = CacheKey::new(&unit(), "pf", "dv");
        assert!(cache.lookup(&key).is_none());
        cache.store(&key, &report()).unwrap();
        assert_eq!(cache.lookup(&key).unwrap(), report());
    }

    #[test]
    fn any_constituent_changes_key() {
        let base = CacheKey::new(&unit(), "pf", "dv");
        assert_ne!(base, CacheKey::new(&unit(), "pf2", "dv"));
        assert_ne!(base, CacheKey::new(&unit(), "pf", "dv2"));
        let mut u = unit();
        u.model.quantization = crate::model::Quantization::Int8;
        assert_ne!(base, CacheKey::new(&u, "pf", "dv"));
        let mut u = unit();
        u.task_args.max_new_tokens = Some(3);
        assert_ne!(base, CacheKey::new(&u, "pf", "dv"));
        let mut u = unit();
        u.language = "hi".into();
        assert_ne!(base, CacheKey::new(&u, "pf", "dv"));
        let mut u = unit();
        u.shard = Shard { index: 0, total: 2 };
        assert_ne!(base, CacheKey::new(&u, "pf", "dv"));
    }

    #[test]
    fn corrupt_entry_is_absent_and_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::new(dir.path());
        let key = CacheKey::new(&unit(), "pf", "dv");
        std::fs::write(cache.path_for(&key), b"{not json").unwrap();
        assert!(cache.lookup(&key).is_none());
        cache.store(&key, &report()).unwrap();
        assert_eq!(cache.lookup(&key).unwrap(), report());
    }
}
