//! Benchmark definitions as they appear in suite configuration files.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::metrics::ExtractionRule;

/// A problem found while validating configuration, addressed by the dotted
/// key path of the offending value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub message: String,
}

impl Finding {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

/// Arguments of one benchmark. The first block mirrors the keys every
/// benchmark entry carries; the second block holds optional knobs for
/// dataset mapping and scoring.
///
/// `num_few_shot`, `max_new_tokens`, `generation_batch_size` and
/// `temperature` may be omitted in a file, in which case the suite defaults
/// fill them in at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskArgs {
    pub dataset_name: String,
    #[serde(default)]
    pub target_languages: Vec<String>,
    pub dataset_split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_few_shot: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_batch_size: Option<i64>,
    #[serde(default)]
    pub prompt_template_name_zeroshot: String,
    #[serde(default)]
    pub prompt_template_name_fewshot: String,
    pub prompt_file_benchmark_key: String,
    pub prompt_file_category: String,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Metric that feeds the per-model average; defaults to the evaluator's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_metric: Option<String>,
    /// Overrides the format inferred from the file extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_format: Option<DatasetFormat>,
    /// Template placeholder → dataset column (dotted path into a record).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_map: Option<IndexMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_field: Option<String>,
    /// Naming of per-language subsets when records carry no language
    /// column, e.g. `"{lang}"` or `"{split}_{lang}"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_subset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionRule>,
    /// Completions sampled per problem for code tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandbox_timeout_ms: Option<i64>,
}

/// Fallback generation settings applied to every benchmark that does not
/// set its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationDefaults {
    pub max_new_tokens: i64,
    pub generation_batch_size: i64,
    pub temperature: f64,
    pub num_few_shot: i64,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self { max_new_tokens: 256, generation_batch_size: 8, temperature: 0.0, num_few_shot: 0 }
    }
}

impl GenerationDefaults {
    pub fn validate(&self, path: &str) -> Vec<Finding> {
        let mut out = Vec::new();
        if self.max_new_tokens < 1 {
            out.push(Finding::new(format!("{path}.max_new_tokens"), "must be at least 1"));
        }
        if self.generation_batch_size < 1 {
            out.push(Finding::new(format!("{path}.generation_batch_size"), "must be at least 1"));
        }
        if !(self.temperature >= 0.0) {
            out.push(Finding::new(format!("{path}.temperature"), "must be non-negative"));
        }
        if self.num_few_shot < 0 {
            out.push(Finding::new(format!("{path}.num_few_shot"), "must be non-negative"));
        }
        out
    }
}

/// One benchmark entry keyed by name in the `specs` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(skip)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub evaluation_function: String,
    pub task_args: TaskArgs,
}

/// Entry shape accepted from files; unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SpecEntry {
    #[serde(default)]
    pub description: String,
    pub evaluation_function: String,
    pub task_args: TaskArgs,
}

impl SpecEntry {
    pub(crate) fn into_spec(self, name: String) -> BenchmarkSpec {
        BenchmarkSpec {
            name,
            description: self.description,
            evaluation_function: self.evaluation_function,
            task_args: self.task_args,
        }
    }
}

impl BenchmarkSpec {
    /// Fills generation settings the entry left unset.
    pub fn apply_defaults(&mut self, defaults: &GenerationDefaults) {
        let args = &mut self.task_args;
        args.num_few_shot.get_or_insert(defaults.num_few_shot);
        args.max_new_tokens.get_or_insert(defaults.max_new_tokens);
        args.generation_batch_size.get_or_insert(defaults.generation_batch_size);
        args.temperature.get_or_insert(defaults.temperature);
    }

    pub fn num_few_shot(&self) -> usize {
        self.task_args.num_few_shot.unwrap_or(0).max(0) as usize
    }

    pub fn max_new_tokens(&self) -> usize {
        self.task_args.max_new_tokens.unwrap_or(1).max(1) as usize
    }

    pub fn generation_batch_size(&self) -> usize {
        self.task_args.generation_batch_size.unwrap_or(1).max(1) as usize
    }

    pub fn temperature(&self) -> f64 {
        self.task_args.temperature.unwrap_or(0.0)
    }

    /// Template used for this spec's prompts: the few-shot template when
    /// shots are requested, the zero-shot template otherwise.
    pub fn template_name(&self) -> &str {
        if self.num_few_shot() > 0 {
            &self.task_args.prompt_template_name_fewshot
        } else {
            &self.task_args.prompt_template_name_zeroshot
        }
    }

    /// Languages to evaluate; a monolingual task yields one empty code.
    pub fn languages(&self) -> Vec<String> {
        if self.task_args.target_languages.is_empty() {
            vec![String::new()]
        } else {
            self.task_args.target_languages.clone()
        }
    }

    /// All invariant violations, with key paths rooted at `specs.<name>`.
    pub fn validate(&self) -> Vec<Finding> {
        let base = format!("specs.{}", self.name);
        let args_path = format!("{base}.task_args");
        let args = &self.task_args;
        let mut out = Vec::new();

        if self.name.trim().is_empty() {
            out.push(Finding::new("specs", "spec name must not be empty"));
        }
        let segments: Vec<&str> = self.evaluation_function.split('.').collect();
        if segments.len() < 2 || segments.iter().any(|s| s.trim().is_empty()) {
            out.push(Finding::new(
                format!("{base}.evaluation_function"),
                format!(
                    "{:?} is not a dotted path with at least two segments",
                    self.evaluation_function
                ),
            ));
        }
        for (key, value) in [
            ("dataset_name", &args.dataset_name),
            ("dataset_split", &args.dataset_split),
            ("prompt_file_benchmark_key", &args.prompt_file_benchmark_key),
            ("prompt_file_category", &args.prompt_file_category),
        ] {
            if value.trim().is_empty() {
                out.push(Finding::new(format!("{args_path}.{key}"), "must not be empty"));
            }
        }
        match args.num_few_shot {
            Some(n) if n < 0 => out.push(Finding::new(
                format!("{args_path}.num_few_shot"),
                format!("must be non-negative, got {n}"),
            )),
            Some(n) if n > 0 && args.prompt_template_name_fewshot.trim().is_empty() => {
                out.push(Finding::new(
                    format!("{args_path}.prompt_template_name_fewshot"),
                    "required when num_few_shot > 0",
                ))
            }
            Some(0) if args.prompt_template_name_zeroshot.trim().is_empty() => {
                out.push(Finding::new(
                    format!("{args_path}.prompt_template_name_zeroshot"),
                    "required when num_few_shot = 0",
                ))
            }
            _ => {}
        }
        for (key, value) in [
            ("max_new_tokens", args.max_new_tokens),
            ("generation_batch_size", args.generation_batch_size),
            ("num_samples", args.num_samples),
            ("sandbox_timeout_ms", args.sandbox_timeout_ms),
        ] {
            if let Some(v) = value {
                if v < 1 {
                    out.push(Finding::new(
                        format!("{args_path}.{key}"),
                        format!("must be at least 1, got {v}"),
                    ));
                }
            }
        }
        if let Some(t) = args.temperature {
            if !(t >= 0.0) {
                out.push(Finding::new(format!("{args_path}.temperature"), "must be non-negative"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, lang) in args.target_languages.iter().enumerate() {
            if lang.trim().is_empty() {
                out.push(Finding::new(format!("{args_path}.target_languages[{i}]"), "empty language code"));
            } else if !seen.insert(lang) {
                out.push(Finding::new(
                    format!("{args_path}.target_languages[{i}]"),
                    format!("duplicate language {lang:?}"),
                ));
            }
        }
        if let Some(metric) = &args.primary_metric {
            if metric.trim().is_empty() {
                out.push(Finding::new(format!("{args_path}.primary_metric"), "must not be empty"));
            }
        }
        if let Some(rule) = &args.extraction {
            if rule.valid_labels.is_empty() {
                out.push(Finding::new(format!("{args_path}.extraction.valid_labels"), "must not be empty"));
            }
            if let Err(err) = rule.compile() {
                out.push(Finding::new(format!("{args_path}.extraction.rules"), err.to_string()));
            }
        }
        if let Some(lang_subset) = &args.language_subset {
            if !lang_subset.contains("{lang}") {
                out.push(Finding::new(
                    format!("{args_path}.language_subset"),
                    "pattern must contain {lang}",
                ));
            }
        }
        out
    }
}
