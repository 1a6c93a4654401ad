//! Hierarchical JSON suite configuration: loading, deep merging,
//! validation and parameter-sweep expansion.
//!
//! Files are merged in the order given. Objects merge key by key and
//! recursively; scalars and arrays in a later file replace earlier values.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::spec::{BenchmarkSpec, Finding, GenerationDefaults, SpecEntry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    NotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: invalid JSON: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid configuration at {key_path}: {message}")]
    Schema { key_path: String, message: String },
    #[error("configuration is invalid:\n{}", format_findings(.0))]
    Invalid(Vec<Finding>),
    #[error("no config files given")]
    NoFiles,
}

fn format_findings(findings: &[Finding]) -> String {
    findings.iter().map(|f| format!("  - {f}")).collect::<Vec<_>>().join("\n")
}

/// Values of one task-arg field to sweep over, applied to every spec whose
/// name matches the shell-style `selector`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSweep {
    pub axis: String,
    pub values: Vec<Value>,
    #[serde(default = "match_all")]
    pub selector: String,
}

fn match_all() -> String {
    "*".into()
}

/// The point of a sweep a config was expanded to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAssignment {
    pub axis: String,
    pub selector: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub groups: IndexMap<String, Vec<String>>,
    pub specs: IndexMap<String, BenchmarkSpec>,
    pub defaults: GenerationDefaults,
    pub sweeps: Vec<ParameterSweep>,
    pub source_paths: Vec<PathBuf>,
    /// Set on configs produced by [`expand_sweeps`].
    pub sweep_assignment: Vec<SweepAssignment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    groups: Option<IndexMap<String, Vec<String>>>,
    specs: Option<IndexMap<String, SpecEntry>>,
    #[serde(default)]
    defaults: GenerationDefaults,
    #[serde(default)]
    sweeps: Vec<ParameterSweep>,
}

/// Recursively merges `overlay` into `base`.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(base_map), Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(&key) {
                    Some(existing) => deep_merge(existing, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::NotFound(path.to_owned())
        } else {
            ConfigError::Io { path: path.to_owned(), source }
        }
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Loads and merges `paths` in order (later files win) and validates the
/// result.
pub fn load_config<P: AsRef<Path>>(paths: &[P]) -> Result<SuiteConfig, ConfigError> {
    if paths.is_empty() {
        return Err(ConfigError::NoFiles);
    }
    let mut merged = Value::Object(Map::new());
    for path in paths {
        deep_merge(&mut merged, read_json(path.as_ref())?);
    }
    let mut config = from_value(merged)?;
    config.source_paths = paths.iter().map(|p| p.as_ref().to_owned()).collect();
    Ok(config)
}

/// Parses one JSON document as a suite config and validates it.
pub fn from_json_str(text: &str) -> Result<SuiteConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: PathBuf::from("<string>"),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    from_value(value)
}

/// Builds a config from an already merged JSON document and validates it.
pub fn from_value(value: Value) -> Result<SuiteConfig, ConfigError> {
    if !value.is_object() {
        return Err(ConfigError::Schema {
            key_path: "<root>".into(),
            message: "top level must be a JSON object".into(),
        });
    }
    let raw: RawSuite = serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Schema {
        key_path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut findings = Vec::new();
    if raw.groups.is_none() {
        findings.push(Finding::new("groups", "required key missing"));
    }
    let specs = raw
        .specs
        .unwrap_or_default()
        .into_iter()
        .map(|(name, entry)| {
            let spec = entry.into_spec(name.clone());
            (name, spec)
        })
        .collect();
    let config = SuiteConfig {
        groups: raw.groups.unwrap_or_default(),
        specs,
        defaults: raw.defaults,
        sweeps: raw.sweeps,
        source_paths: Vec::new(),
        sweep_assignment: Vec::new(),
    };
    findings.extend(validate(&config));
    if findings.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(findings))
    }
}

/// Every invariant violation in `config`; empty means valid.
pub fn validate(config: &SuiteConfig) -> Vec<Finding> {
    let mut findings = Vec::new();
    if config.specs.is_empty() {
        findings.push(Finding::new("specs", "no specs defined"));
    }
    findings.extend(config.defaults.validate("defaults"));

    let mut grouped: HashSet<&str> = HashSet::new();
    for (group, members) in &config.groups {
        if group.trim().is_empty() {
            findings.push(Finding::new("groups", "group name must not be empty"));
        }
        for (i, member) in members.iter().enumerate() {
            let path = format!("groups.{group}[{i}]");
            if !config.specs.contains_key(member) {
                findings.push(Finding::new(path, format!("unknown spec {member:?}")));
            } else if !grouped.insert(member) {
                findings.push(Finding::new(path, format!("spec {member:?} is listed more than once")));
            }
        }
    }
    for (name, spec) in &config.specs {
        if spec.name != *name {
            findings.push(Finding::new(format!("specs.{name}"), "entry name mismatch"));
        }
        findings.extend(spec.validate());
    }
    for (i, sweep) in config.sweeps.iter().enumerate() {
        findings.extend(validate_sweep(config, sweep, &format!("sweeps[{i}]")));
    }
    findings
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn validate_sweep(config: &SuiteConfig, sweep: &ParameterSweep, path: &str) -> Vec<Finding> {
    let mut out = Vec::new();
    if sweep.values.is_empty() {
        out.push(Finding::new(format!("{path}.values"), "must not be empty"));
    }
    if let Some(first) = sweep.values.first() {
        for (i, v) in sweep.values.iter().enumerate() {
            if v.is_array() || v.is_object() {
                out.push(Finding::new(format!("{path}.values[{i}]"), "must be a JSON scalar"));
            } else if json_kind(v) != json_kind(first) {
                out.push(Finding::new(
                    format!("{path}.values[{i}]"),
                    format!("expected {}, got {}", json_kind(first), json_kind(v)),
                ));
            }
        }
    }
    let selected = match select_specs(config, &sweep.selector) {
        Ok(s) => s,
        Err(msg) => {
            out.push(Finding::new(format!("{path}.selector"), msg));
            return out;
        }
    };
    if selected.is_empty() {
        out.push(Finding::new(
            format!("{path}.selector"),
            format!("{:?} matches no spec", sweep.selector),
        ));
    }
    for name in selected {
        let spec = &config.specs[name];
        for (i, value) in sweep.values.iter().enumerate() {
            match with_task_arg(spec, &sweep.axis, value.clone()) {
                Ok(updated) => {
                    for f in updated.validate() {
                        out.push(Finding::new(
                            format!("{path}.values[{i}]"),
                            format!("invalid for {name}: {f}"),
                        ));
                    }
                }
                Err(msg) => out.push(Finding::new(format!("{path}.axis"), format!("{name}: {msg}"))),
            }
        }
    }
    out
}

fn select_specs<'a>(config: &'a SuiteConfig, selector: &str) -> Result<Vec<&'a str>, String> {
    let pattern = glob::Pattern::new(selector).map_err(|e| format!("invalid glob: {e}"))?;
    Ok(config.specs.keys().filter(|n| pattern.matches(n)).map(String::as_str).collect())
}

const TASK_ARG_KEYS: &[&str] = &[
    "dataset_name",
    "target_languages",
    "dataset_split",
    "num_few_shot",
    "max_new_tokens",
    "generation_batch_size",
    "prompt_template_name_zeroshot",
    "prompt_template_name_fewshot",
    "prompt_file_benchmark_key",
    "prompt_file_category",
    "temperature",
    "primary_metric",
    "dataset_format",
    "field_map",
    "id_field",
    "gold_field",
    "language_field",
    "language_subset",
    "extraction",
    "num_samples",
    "sandbox_timeout_ms",
];

/// Returns a copy of `spec` with the task arg at dotted `axis` set to
/// `value`. Nested segments must already exist on the spec.
fn with_task_arg(spec: &BenchmarkSpec, axis: &str, value: Value) -> Result<BenchmarkSpec, String> {
    let segments: Vec<&str> = axis.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(format!("invalid axis path {axis:?}"));
    }
    if !TASK_ARG_KEYS.contains(&segments[0]) {
        return Err(format!("{:?} is not a task argument", segments[0]));
    }
    let mut args = serde_json::to_value(&spec.task_args).map_err(|e| e.to_string())?;
    let mut slot = &mut args;
    for (depth, segment) in segments.iter().enumerate() {
        let map = slot
            .as_object_mut()
            .ok_or_else(|| format!("axis {axis:?} does not resolve: {segment:?} has no parent object"))?;
        if depth + 1 == segments.len() {
            if depth > 0 && !map.contains_key(*segment) {
                return Err(format!("axis {axis:?} does not resolve"));
            }
            map.insert((*segment).to_owned(), value);
            break;
        }
        slot = map
            .get_mut(*segment)
            .ok_or_else(|| format!("axis {axis:?} does not resolve"))?;
    }
    let task_args = serde_json::from_value(args).map_err(|e| format!("value does not fit {axis:?}: {e}"))?;
    Ok(BenchmarkSpec { task_args, ..spec.clone() })
}

/// Cartesian product over all sweeps. A config without sweeps expands to
/// itself.
pub fn expand_sweeps(config: &SuiteConfig) -> Result<Vec<SuiteConfig>, ConfigError> {
    let findings: Vec<Finding> = config
        .sweeps
        .iter()
        .enumerate()
        .flat_map(|(i, s)| validate_sweep(config, s, &format!("sweeps[{i}]")))
        .collect();
    if !findings.is_empty() {
        return Err(ConfigError::Invalid(findings));
    }
    let mut expanded = vec![SuiteConfig { sweeps: Vec::new(), ..config.clone() }];
    for sweep in &config.sweeps {
        let selected: Vec<String> = select_specs(config, &sweep.selector)
            .map_err(|message| ConfigError::Schema { key_path: "sweeps".into(), message })?
            .into_iter()
            .map(str::to_owned)
            .collect();
        let mut next = Vec::with_capacity(expanded.len() * sweep.values.len());
        for base in &expanded {
            for value in &sweep.values {
                let mut point = base.clone();
                for name in &selected {
                    let updated = with_task_arg(&point.specs[name], &sweep.axis, value.clone())
                        .map_err(|message| ConfigError::Schema {
                            key_path: format!("sweeps.{}", sweep.axis),
                            message,
                        })?;
                    point.specs.insert(name.clone(), updated);
                }
                point.sweep_assignment.push(SweepAssignment {
                    axis: sweep.axis.clone(),
                    selector: sweep.selector.clone(),
                    value: value.clone(),
                });
                next.push(point);
            }
        }
        expanded = next;
    }
    Ok(expanded)
}

impl SuiteConfig {
    /// The config as a document in the file schema. Loading it back yields
    /// an equal config (apart from `source_paths`).
    pub fn to_json(&self) -> Value {
        let mut specs = Map::new();
        for (name, spec) in &self.specs {
            specs.insert(name.clone(), serde_json::to_value(spec).expect("spec serializes"));
        }
        let mut root = Map::new();
        root.insert("groups".into(), serde_json::to_value(&self.groups).expect("groups serialize"));
        root.insert("specs".into(), Value::Object(specs));
        root.insert("defaults".into(), serde_json::to_value(&self.defaults).expect("defaults serialize"));
        if !self.sweeps.is_empty() {
            root.insert("sweeps".into(), serde_json::to_value(&self.sweeps).expect("sweeps serialize"));
        }
        Value::Object(root)
    }

    /// The spec as written in the file.
    pub fn spec(&self, name: &str) -> Option<&BenchmarkSpec> {
        self.specs.get(name)
    }

    /// The spec with `defaults` filling the generation settings it leaves
    /// unset. This is what gets registered and planned.
    pub fn resolved_spec(&self, name: &str) -> Option<BenchmarkSpec> {
        let mut spec = self.specs.get(name)?.clone();
        spec.apply_defaults(&self.defaults);
        Some(spec)
    }
}
