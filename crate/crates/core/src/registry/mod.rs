//! Catalogue of benchmark specs grouped by category, plus evaluator
//! plugins addressed by dotted names.

pub mod builtin;
pub mod dataset;
pub mod evaluators;

use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

pub use dataset::{
    DatasetError, DatasetFetcher, DatasetHandle, DatasetLoader, ExampleRecord, Gold, LocalMirror, SourceKind,
};
pub use evaluators::{builtin_evaluators, Evaluator};

use crate::config::SuiteConfig;
use crate::spec::{BenchmarkSpec, Finding};

/// Group that collects specs a config does not place in any group.
pub const UNGROUPED: &str = "Ungrouped";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("benchmark {0:?} is already registered")]
    DuplicateSpec(String),
    #[error("invalid benchmark {name:?}: {}", .findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpec { name: String, findings: Vec<Finding> },
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("unknown benchmark {0:?}")]
    UnknownSpec(String),
    #[error("{0:?} is not a dotted evaluator path")]
    InvalidPath(String),
    #[error("cannot resolve {path:?}: no evaluators registered under namespace {namespace:?}")]
    NamespaceMissing { path: String, namespace: String },
    #[error("cannot resolve {path:?}: namespace {namespace:?} has no function {function:?}")]
    FunctionMissing { path: String, namespace: String, function: String },
    #[error("an evaluator is already registered under {0:?}")]
    DuplicateEvaluator(String),
}

/// Evaluator plugins keyed by dotted path.
#[derive(Clone, Default)]
pub struct EvaluatorRegistry {
    entries: IndexMap<String, Arc<dyn Evaluator>>,
}

impl std::fmt::Debug for EvaluatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

fn split_path(path: &str) -> Result<(&str, &str), RegistryError> {
    let invalid = || RegistryError::InvalidPath(path.to_owned());
    let (namespace, function) = path.rsplit_once('.').ok_or_else(invalid)?;
    if namespace.split('.').any(|s| s.trim().is_empty()) || function.trim().is_empty() {
        return Err(invalid());
    }
    Ok((namespace, function))
}

impl EvaluatorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        for (path, evaluator) in builtin_evaluators() {
            registry.register(path, evaluator).expect("built-in names are unique");
        }
        registry
    }

    pub fn register(&mut self, path: &str, evaluator: Arc<dyn Evaluator>) -> Result<(), RegistryError> {
        split_path(path)?;
        if self.entries.contains_key(path) {
            return Err(RegistryError::DuplicateEvaluator(path.to_owned()));
        }
        self.entries.insert(path.to_owned(), evaluator);
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> Result<Arc<dyn Evaluator>, RegistryError> {
        let (namespace, function) = split_path(path)?;
        if let Some(evaluator) = self.entries.get(path) {
            return Ok(evaluator.clone());
        }
        let prefix = format!("{namespace}.");
        if self.entries.keys().any(|k| k.starts_with(&prefix)) {
            Err(RegistryError::FunctionMissing {
                path: path.to_owned(),
                namespace: namespace.to_owned(),
                function: function.to_owned(),
            })
        } else {
            Err(RegistryError::NamespaceMissing { path: path.to_owned(), namespace: namespace.to_owned() })
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Specs in registration order, grouped by category.
#[derive(Debug, Clone)]
pub struct Registry {
    groups: IndexMap<String, Vec<String>>,
    specs: IndexMap<String, BenchmarkSpec>,
    evaluators: EvaluatorRegistry,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    /// Empty catalogue with the built-in evaluators available.
    pub fn new() -> Self {
        Self::with_evaluators(EvaluatorRegistry::with_builtins())
    }

    pub fn with_evaluators(evaluators: EvaluatorRegistry) -> Self {
        Self { groups: IndexMap::new(), specs: IndexMap::new(), evaluators }
    }

    /// Registers every spec of `config` under its group, in file order.
    /// Specs listed in no group land in [`UNGROUPED`].
    pub fn from_config(config: &SuiteConfig) -> Result<Self, RegistryError> {
        Self::from_config_with(config, EvaluatorRegistry::with_builtins())
    }

    pub fn from_config_with(config: &SuiteConfig, evaluators: EvaluatorRegistry) -> Result<Self, RegistryError> {
        let mut registry = Self::with_evaluators(evaluators);
        for (group, members) in &config.groups {
            registry.groups.entry(group.clone()).or_default();
            for name in members {
                let spec = config.resolved_spec(name).ok_or_else(|| RegistryError::UnknownSpec(name.clone()))?;
                registry.register(spec, group)?;
            }
        }
        for name in config.specs.keys() {
            if !registry.specs.contains_key(name) {
                registry.register(config.resolved_spec(name).expect("listed spec"), UNGROUPED)?;
            }
        }
        Ok(registry)
    }

    pub fn register(&mut self, spec: BenchmarkSpec, group: &str) -> Result<(), RegistryError> {
        let findings = spec.validate();
        if !findings.is_empty() {
            return Err(RegistryError::InvalidSpec { name: spec.name.clone(), findings });
        }
        if self.specs.contains_key(&spec.name) {
            return Err(RegistryError::DuplicateSpec(spec.name));
        }
        self.groups.entry(group.to_owned()).or_default().push(spec.name.clone());
        self.specs.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn list_groups(&self) -> Vec<&str> {
        self.groups.keys().map(String::as_str).collect()
    }

    pub fn list_subtasks(&self, group: &str) -> Result<Vec<&str>, RegistryError> {
        self.groups
            .get(group)
            .map(|names| names.iter().map(String::as_str).collect())
            .ok_or_else(|| RegistryError::UnknownGroup(group.to_owned()))
    }

    pub fn spec(&self, name: &str) -> Result<&BenchmarkSpec, RegistryError> {
        self.specs.get(name).ok_or_else(|| RegistryError::UnknownSpec(name.to_owned()))
    }

    pub fn specs(&self) -> impl Iterator<Item = &BenchmarkSpec> {
        self.specs.values()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn resolve_evaluator(&self, path: &str) -> Result<Arc<dyn Evaluator>, RegistryError> {
        self.evaluators.resolve(path)
    }

    pub fn evaluators(&self) -> &EvaluatorRegistry {
        &self.evaluators
    }

    pub fn evaluators_mut(&mut self) -> &mut EvaluatorRegistry {
        &mut self.evaluators
    }

    /// Expands a selection of group names and spec names into spec names,
    /// in registry order and without duplicates.
    pub fn resolve_selection(&self, selection: &[String]) -> Result<Vec<String>, RegistryError> {
        let mut chosen = std::collections::HashSet::new();
        for item in selection {
            if let Some(members) = self.groups.get(item) {
                chosen.extend(members.iter().cloned());
            } else if self.specs.contains_key(item) {
                chosen.insert(item.clone());
            } else {
                return Err(RegistryError::UnknownSpec(item.clone()));
            }
        }
        Ok(self.specs.keys().filter(|k| chosen.contains(*k)).cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::TaskArgs;
    use serde_json::json;

    fn spec(name: &str, batch: i64) -> BenchmarkSpec {
        let task_args: TaskArgs = serde_json::from_value(json!({
            "dataset_name": "ybisk/piqa",
            "dataset_split": "validation",
            "num_few_shot": 0,
            "max_new_tokens": 5,
            "generation_batch_size": batch,
            "prompt_template_name_zeroshot": "piqa_generation",
            "prompt_file_benchmark_key": "piqa",
            "prompt_file_category": "commonsense",
        }))
        .unwrap();
        BenchmarkSpec {
            name: name.into(),
            description: String::new(),
            evaluation_function: "core.multiple_choice.evaluate".into(),
            task_args,
        }
    }

    #[test]
    fn register_and_list() {
        let mut r = Registry::new();
        assert!(r.list_groups().is_empty());
        r.register(spec("PIQA", 8), "Commonsense Reasoning").unwrap();
        assert_eq!(r.list_groups(), ["Commonsense Reasoning"]);
        assert_eq!(r.list_subtasks("Commonsense Reasoning").unwrap(), ["PIQA"]);
        assert_eq!(r.register(spec("PIQA", 8), "Other"), Err(RegistryError::DuplicateSpec("PIQA".into())));
        assert!(matches!(r.register(spec("Bad", 0), "Other"), Err(RegistryError::InvalidSpec { .. })));
        assert_eq!(r.list_subtasks("Nope"), Err(RegistryError::UnknownGroup("Nope".into())));
    }

    #[test]
    fn resolution_distinguishes_missing_parts() {
        let r = Registry::new();
        assert!(r.resolve_evaluator("core.multiple_choice.evaluate").is_ok());
        assert!(r.resolve_evaluator("indic.arc_c_in.evaluate_arc_c_in").is_ok());
        assert!(matches!(
            r.resolve_evaluator("nonexistent.module.fn"),
            Err(RegistryError::NamespaceMissing { .. })
        ));
        assert!(matches!(
            r.resolve_evaluator("core.multiple_choice.other"),
            Err(RegistryError::FunctionMissing { .. })
        ));
        assert!(matches!(r.resolve_evaluator("flat"), Err(RegistryError::InvalidPath(_))));
    }

    #[test]
    fn registered_plugin_resolves_to_same_handle() {
        let mut evaluators = EvaluatorRegistry::empty();
        let plugin: Arc<dyn Evaluator> = Arc::new(evaluators::ExactMatch);
        evaluators.register("my.plugin.score", plugin.clone()).unwrap();
        assert!(Arc::ptr_eq(&evaluators.resolve("my.plugin.score").unwrap(), &plugin));
        assert!(matches!(
            evaluators.register("my.plugin.score", plugin),
            Err(RegistryError::DuplicateEvaluator(_))
        ));
    }

    #[test]
    fn selection_expands_groups() {
        let mut r = Registry::new();
        r.register(spec("A", 8), "G1").unwrap();
        r.register(spec("B", 8), "G1").unwrap();
        r.register(spec("C", 8), "G2").unwrap();
        assert_eq!(r.resolve_selection(&["C".into(), "G1".into()]).unwrap(), ["A", "B", "C"]);
        assert!(r.resolve_selection(&["nope".into()]).is_err());
    }
}
