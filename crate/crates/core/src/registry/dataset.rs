//! Dataset loading from local files, a hub fetch interface, or custom
//! sources, with per-language filtering and content fingerprints.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical::fingerprint;
use crate::spec::{BenchmarkSpec, DatasetFormat, TaskArgs};

const ID_CANDIDATES: &[&str] = &["id", "idx", "task_id", "qid", "example_id"];
const GOLD_CANDIDATES: &[&str] = &[
    "answer_label",
    "answerKey",
    "answer",
    "answers",
    "label",
    "gold",
    "target",
    "references",
    "output",
    "test",
];
const LANGUAGE_CANDIDATES: &[&str] = &["language", "lang"];
const DEFAULT_SUBSET_PATTERN: &str = "{lang}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Gold {
    Text(String),
    References(Vec<String>),
}

impl Gold {
    /// Every acceptable answer; an empty reference list counts as the
    /// empty answer.
    pub fn references(&self) -> Vec<&str> {
        match self {
            Gold::Text(t) => vec![t.as_str()],
            Gold::References(refs) if refs.is_empty() => vec![""],
            Gold::References(refs) => refs.iter().map(String::as_str).collect(),
        }
    }

    pub fn first(&self) -> &str {
        self.references()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    /// Flattened record: nested values become `parent_child` and
    /// `parent_0` style keys.
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
    #[serde(default)]
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Hub,
    LocalFile,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub spec_name: String,
    pub source_kind: SourceKind,
    pub split: String,
    pub language: String,
    pub records: Vec<ExampleRecord>,
    /// SHA-256 over the canonical serialization of `records`.
    pub version: String,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of shard `index` out of `total` contiguous shards.
    pub fn shard(&self, index: usize, total: usize) -> &[ExampleRecord] {
        let n = self.records.len();
        let total = total.max(1);
        &self.records[index * n / total..(index + 1) * n / total]
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset {dataset:?} is unreachable: {message}")]
    Unreachable { dataset: String, message: String },
    #[error("dataset {dataset:?} has no split {split:?}")]
    UnknownSplit { dataset: String, split: String },
    #[error("language {language:?} is not among the spec's target languages")]
    LanguageNotTargeted { language: String },
    #[error("dataset {dataset:?} has no records for language {language:?}")]
    LanguageNotPresent { dataset: String, language: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
}

/// Raw rows fetched for one (dataset, subset, split).
pub trait DatasetFetcher: Send + Sync {
    fn fetch(&self, dataset: &str, subset: Option<&str>, split: &str) -> Result<Vec<Value>, DatasetError>;
}

/// Hub stand-in reading `<root>/<dataset>/[<subset>/]<split>.{jsonl,csv}`.
#[derive(Debug, Clone)]
pub struct LocalMirror {
    root: PathBuf,
}

impl LocalMirror {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl DatasetFetcher for LocalMirror {
    fn fetch(&self, dataset: &str, subset: Option<&str>, split: &str) -> Result<Vec<Value>, DatasetError> {
        let mut dir = self.root.join(dataset);
        if !dir.is_dir() {
            return Err(DatasetError::Unreachable {
                dataset: dataset.to_owned(),
                message: format!("not found under {}", self.root.display()),
            });
        }
        if let Some(subset) = subset {
            dir = dir.join(subset);
        }
        for (ext, format) in [("jsonl", DatasetFormat::Jsonl), ("csv", DatasetFormat::Csv)] {
            let path = dir.join(format!("{split}.{ext}"));
            if path.is_file() {
                return read_rows(&path, format);
            }
        }
        Err(DatasetError::UnknownSplit {
            dataset: match subset {
                Some(s) => format!("{dataset}/{s}"),
                None => dataset.to_owned(),
            },
            split: split.to_owned(),
        })
    }
}

/// Fetcher for environments without any hub access.
pub struct Offline;

impl DatasetFetcher for Offline {
    fn fetch(&self, dataset: &str, _subset: Option<&str>, _split: &str) -> Result<Vec<Value>, DatasetError> {
        Err(DatasetError::Unreachable { dataset: dataset.to_owned(), message: "no dataset hub configured".into() })
    }
}

type CustomSource = Arc<dyn Fn(&str, &str) -> Result<Vec<Value>, DatasetError> + Send + Sync>;

/// Reads one local JSONL or CSV file into JSON objects.
pub fn read_rows(path: &Path, format: DatasetFormat) -> Result<Vec<Value>, DatasetError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Unreachable { dataset: shown.clone(), message: e.to_string() })?;
    match format {
        DatasetFormat::Jsonl => text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| {
                let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                    path: shown.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if value.is_object() {
                    Ok(value)
                } else {
                    Err(DatasetError::Parse { path: shown.clone(), line: i + 1, message: "not a JSON object".into() })
                }
            })
            .collect(),
        DatasetFormat::Csv => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader
                .headers()
                .map_err(|e| DatasetError::Parse { path: shown.clone(), line: 1, message: e.to_string() })?
                .clone();
            reader
                .records()
                .enumerate()
                .map(|(i, row)| {
                    let row = row.map_err(|e| DatasetError::Parse {
                        path: shown.clone(),
                        line: i + 2,
                        message: e.to_string(),
                    })?;
                    let object: Map<String, Value> =
                        headers.iter().zip(row.iter()).map(|(h, v)| (h.to_owned(), Value::from(v))).collect();
                    Ok(Value::Object(object))
                })
                .collect()
        }
    }
}

fn infer_format(path: &Path, declared: Option<DatasetFormat>) -> DatasetFormat {
    declared.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
        _ => DatasetFormat::Jsonl,
    })
}

fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        other => Some(other.to_string()),
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}_{k}") };
                flatten_into(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(&format!("{prefix}_{i}"), v, out);
            }
        }
        other => {
            if let Some(text) = scalar_text(other) {
                out.insert(prefix.to_owned(), text);
            }
        }
    }
}

/// Looks up a dotted path such as `answers.text.0`.
fn lookup<'a>(row: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(row, |node, segment| match node {
        Value::Object(map) => map.get(segment),
        Value::Array(items) => segment.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

fn gold_from(value: &Value) -> Option<Gold> {
    match value {
        Value::Null => None,
        Value::Array(items) => Some(Gold::References(items.iter().filter_map(scalar_text).collect())),
        Value::Object(map) => {
            for key in ["text", "texts", "aliases", "value"] {
                if let Some(inner) = map.get(key) {
                    return gold_from(inner);
                }
            }
            Some(Gold::Text(value.to_string()))
        }
        other => scalar_text(other).map(Gold::Text),
    }
}

fn first_present<'a>(row: &'a Value, declared: Option<&str>, candidates: &[&str]) -> Option<&'a Value> {
    match declared {
        Some(path) => lookup(row, path),
        None => candidates.iter().find_map(|c| row.get(*c)),
    }
}

/// Converts raw rows to records, in row order.
pub fn to_records(rows: &[Value], args: &TaskArgs) -> Result<Vec<ExampleRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (index, row) in rows.iter().enumerate() {
        let mut fields = BTreeMap::new();
        flatten_into("", row, &mut fields);
        if let Some(map) = &args.field_map {
            for (placeholder, path) in map {
                if let Some(text) = lookup(row, path).and_then(scalar_text) {
                    fields.insert(placeholder.clone(), text);
                }
            }
        }
        let id = first_present(row, args.id_field.as_deref(), ID_CANDIDATES)
            .and_then(scalar_text)
            .unwrap_or_else(|| format!("{index:06}"));
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let gold = first_present(row, args.gold_field.as_deref(), GOLD_CANDIDATES).and_then(gold_from);
        let language = first_present(row, args.language_field.as_deref(), LANGUAGE_CANDIDATES)
            .and_then(scalar_text)
            .unwrap_or_default();
        out.push(ExampleRecord { id, fields, gold, language });
    }
    Ok(out)
}

/// Loads datasets for specs and caches handles in-process.
pub struct DatasetLoader {
    fetcher: Arc<dyn DatasetFetcher>,
    custom: HashMap<String, CustomSource>,
    cache: RwLock<HashMap<String, Arc<DatasetHandle>>>,
}

impl Default for DatasetLoader {
    fn default() -> Self {
        Self::new(Arc::new(Offline))
    }
}

impl DatasetLoader {
    pub fn new(fetcher: Arc<dyn DatasetFetcher>) -> Self {
        Self { fetcher, custom: HashMap::new(), cache: RwLock::new(HashMap::new()) }
    }

    pub fn with_mirror(root: impl Into<PathBuf>) -> Self {
        Self::new(Arc::new(LocalMirror::new(root)))
    }

    /// Registers a source addressed as `custom:<name>` in `dataset_name`.
    /// The closure receives (split, language).
    pub fn register_custom(
        &mut self,
        name: impl Into<String>,
        source: impl Fn(&str, &str) -> Result<Vec<Value>, DatasetError> + Send + Sync + 'static,
    ) {
        self.custom.insert(name.into(), Arc::new(source));
    }

    pub fn load_dataset(&self, spec: &BenchmarkSpec, language: &str) -> Result<Arc<DatasetHandle>, DatasetError> {
        let args = &spec.task_args;
        if !language.is_empty() && !args.target_languages.iter().any(|l| l == language) {
            return Err(DatasetError::LanguageNotTargeted { language: language.to_owned() });
        }
        let key = fingerprint(&(
            &spec.name,
            &args.dataset_name,
            &args.dataset_split,
            language,
            &args.dataset_format,
            &args.field_map,
            &args.id_field,
            &args.gold_field,
            &args.language_field,
            &args.language_subset,
        ));
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let (source_kind, records) = self.fetch_records(args, language)?;
        let version = fingerprint(&records);
        let handle = Arc::new(DatasetHandle {
            spec_name: spec.name.clone(),
            source_kind,
            split: args.dataset_split.clone(),
            language: language.to_owned(),
            records,
            version,
        });
        self.cache.write().unwrap().insert(key, handle.clone());
        Ok(handle)
    }

    fn fetch_records(&self, args: &TaskArgs, language: &str) -> Result<(SourceKind, Vec<ExampleRecord>), DatasetError> {
        let dataset = &args.dataset_name;
        let split = &args.dataset_split;
        if let Some(name) = dataset.strip_prefix("custom:") {
            let source = self.custom.get(name).ok_or_else(|| DatasetError::Unreachable {
                dataset: dataset.clone(),
                message: "no custom source registered under that name".into(),
            })?;
            let records = to_records(&source(split, language)?, args)?;
            return Ok((SourceKind::Custom, filter_language(records, dataset, language, true)?));
        }

        let path = Path::new(dataset);
        if path.is_file() {
            let rows = read_rows(path, infer_format(path, args.dataset_format))?;
            let records = to_records(&rows, args)?;
            return Ok((SourceKind::LocalFile, filter_language(records, dataset, language, false)?));
        }

        let fetcher: Arc<dyn DatasetFetcher> =
            if path.is_dir() { Arc::new(LocalMirror::new(path)) } else { self.fetcher.clone() };
        let name = if path.is_dir() { "." } else { dataset.as_str() };
        let kind = if path.is_dir() { SourceKind::LocalFile } else { SourceKind::Hub };

        if language.is_empty() {
            let rows = fetcher.fetch(name, None, split)?;
            return Ok((kind, to_records(&rows, args)?));
        }
        if let Some(pattern) = &args.language_subset {
            let subset = pattern.replace("{lang}", language).replace("{split}", split);
            let rows = fetcher.fetch(name, Some(&subset), split)?;
            return Ok((kind, tag_language(to_records(&rows, args)?, language)));
        }
        // Prefer a language column in the split itself; fall back to one
        // subset per language.
        match fetcher.fetch(name, None, split) {
            Ok(rows) => {
                let records = to_records(&rows, args)?;
                if records.iter().any(|r| !r.language.is_empty()) {
                    return Ok((kind, filter_language(records, dataset, language, false)?));
                }
            }
            Err(DatasetError::UnknownSplit { .. }) => {}
            Err(other) => return Err(other),
        }
        let subset = DEFAULT_SUBSET_PATTERN.replace("{lang}", language);
        let rows = fetcher.fetch(name, Some(&subset), split).map_err(|err| match err {
            DatasetError::UnknownSplit { .. } => {
                DatasetError::LanguageNotPresent { dataset: dataset.clone(), language: language.to_owned() }
            }
            other => other,
        })?;
        Ok((kind, tag_language(to_records(&rows, args)?, language)))
    }
}

fn tag_language(mut records: Vec<ExampleRecord>, language: &str) -> Vec<ExampleRecord> {
    for r in &mut records {
        r.language = language.to_owned();
    }
    records
}

/// Keeps records of `language`. Records without a language column are
/// kept only when `untagged_ok`, and then tagged.
fn filter_language(
    records: Vec<ExampleRecord>,
    dataset: &str,
    language: &str,
    untagged_ok: bool,
) -> Result<Vec<ExampleRecord>, DatasetError> {
    if language.is_empty() {
        return Ok(records);
    }
    let kept: Vec<ExampleRecord> = records
        .into_iter()
        .filter(|r| r.language == language || (untagged_ok && r.language.is_empty()))
        .collect();
    if kept.is_empty() {
        return Err(DatasetError::LanguageNotPresent { dataset: dataset.to_owned(), language: language.to_owned() });
    }
    Ok(tag_language(kept, language))
}
