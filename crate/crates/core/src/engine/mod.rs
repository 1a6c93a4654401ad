//! Evaluation orchestration: planning task units, the per-task loop with
//! batch backoff, report caching and the worker pool.

pub mod cache;
pub mod distributed;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, ReportCache, CACHE_DIR_ENV};
pub use distributed::{run_distributed, BackendSlot, WorkerContext};

use crate::canonical::fingerprint;
use crate::model::{BackendError, BackendHandle, GenerationRequest, GenerationResult, ModelDescriptor, ModelError};
use crate::prompts::{render_few_shot, render_zero_shot, select_shots, PromptFile, PromptStore};
use crate::registry::{DatasetLoader, Evaluator, ExampleRecord, Registry, RegistryError};
use crate::spec::{BenchmarkSpec, TaskArgs};

/// Datasets above this many records are split into shards.
pub const DEFAULT_SHARD_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shard {
    pub index: usize,
    pub total: usize,
}

impl Shard {
    pub fn single() -> Self {
        Self { index: 0, total: 1 }
    }
}

/// One (model, spec, language, shard) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUnit {
    pub model: ModelDescriptor,
    pub spec_name: String,
    pub evaluation_function: String,
    /// Fully resolved: defaults, sweep values and primary metric applied.
    pub task_args: TaskArgs,
    pub language: String,
    pub shard: Shard,
    pub unit_id: String,
}

impl TaskUnit {
    pub fn new(
        model: ModelDescriptor,
        spec_name: impl Into<String>,
        evaluation_function: impl Into<String>,
        task_args: TaskArgs,
        language: impl Into<String>,
        shard: Shard,
    ) -> Self {
        let mut unit = Self {
            model,
            spec_name: spec_name.into(),
            evaluation_function: evaluation_function.into(),
            task_args,
            language: language.into(),
            shard,
            unit_id: String::new(),
        };
        unit.unit_id = unit.compute_id();
        unit
    }

    fn compute_id(&self) -> String {
        fingerprint(&(&self.model, &self.spec_name, &self.evaluation_function, &self.task_args, &self.language, &self.shard))
    }

    pub fn spec(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            name: self.spec_name.clone(),
            description: String::new(),
            evaluation_function: self.evaluation_function.clone(),
            task_args: self.task_args.clone(),
        }
    }

    pub fn primary_metric(&self) -> &str {
        self.task_args.primary_metric.as_deref().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub record_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub record_id: String,
    pub status: RecordStatus,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum UnitStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub unit_id: String,
    pub scores: Vec<RecordScore>,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub issues: Vec<RecordIssue>,
    pub effective_batch_size: usize,
    pub wall_time_ms: u64,
    pub cache_hit: bool,
    pub status: UnitStatus,
    pub dataset_version: String,
    pub prompt_fingerprint: String,
}

impl WorkerReport {
    pub fn failed(unit: &TaskUnit, reason: impl Into<String>) -> Self {
        Self {
            unit_id: unit.unit_id.clone(),
            scores: Vec::new(),
            evaluated: 0,
            skipped: 0,
            failed: 0,
            issues: Vec::new(),
            effective_batch_size: 1,
            wall_time_ms: 0,
            cache_hit: false,
            status: UnitStatus::Failed { reason: reason.into() },
            dataset_version: String::new(),
            prompt_fingerprint: String::new(),
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == UnitStatus::Completed
    }

    pub fn record_count(&self) -> usize {
        self.evaluated + self.skipped + self.failed
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("nothing selected to evaluate")]
    EmptySelection,
    #[error("no models given")]
    NoModels,
    #[error("worker count must be at least 1")]
    InvalidWorkers,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("all workers died; {} of {total} units finished", .partial.len())]
    Aborted { partial: Vec<WorkerReport>, total: usize },
}

#[derive(Debug, Clone)]
pub struct PlanOptions {
    pub shard_threshold: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { shard_threshold: DEFAULT_SHARD_THRESHOLD }
    }
}

/// One unit per (model, spec, language), ordered by model, spec, language
/// and shard. When `datasets` is given, specs with more records than the
/// shard threshold are split into contiguous shards.
pub fn plan_tasks(
    registry: &Registry,
    selection: &[String],
    models: &[ModelDescriptor],
    num_workers: usize,
    options: &PlanOptions,
    datasets: Option<&DatasetLoader>,
) -> Result<Vec<TaskUnit>, EngineError> {
    if num_workers < 1 {
        return Err(EngineError::InvalidWorkers);
    }
    if selection.is_empty() {
        return Err(EngineError::EmptySelection);
    }
    if models.is_empty() {
        return Err(EngineError::NoModels);
    }
    let names = registry.resolve_selection(selection)?;
    if names.is_empty() {
        return Err(EngineError::EmptySelection);
    }
    let mut resolved = Vec::with_capacity(names.len());
    for name in &names {
        let spec = registry.spec(name)?.clone();
        let evaluator = registry.resolve_evaluator(&spec.evaluation_function)?;
        let mut args = spec.task_args.clone();
        args.primary_metric.get_or_insert_with(|| evaluator.primary_metric().to_owned());
        let mut per_language = Vec::new();
        for language in spec.languages() {
            let shards = datasets
                .and_then(|loader| loader.load_dataset(&spec, &language).ok())
                .map(|handle| handle.len().div_ceil(options.shard_threshold.max(1)).max(1))
                .unwrap_or(1);
            per_language.push((language, shards));
        }
        resolved.push((spec, args, per_language));
    }

    let mut units = Vec::new();
    for model in models {
        for (spec, args, per_language) in &resolved {
            for (language, shards) in per_language {
                for index in 0..*shards {
                    units.push(TaskUnit::new(
                        model.clone(),
                        &spec.name,
                        &spec.evaluation_function,
                        args.clone(),
                        language,
                        Shard { index, total: *shards },
                    ));
                }
            }
        }
    }
    Ok(units)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffOutcome {
    pub results: Vec<GenerationResult>,
    /// Batch size in force when the last chunk was processed.
    pub effective_batch_size: usize,
    pub halvings: u32,
}

/// Processes `requests` in contiguous chunks, halving the chunk size on
/// resource exhaustion. At size 1 a further exhaustion fails only that
/// request. Other backend errors fail the chunk that hit them.
pub fn generate_with_backoff(
    backend: &mut BackendHandle,
    requests: &[GenerationRequest],
    initial_batch: usize,
) -> BackoffOutcome {
    let mut batch = initial_batch.max(1);
    let mut halvings = 0;
    let mut results = Vec::with_capacity(requests.len());
    let mut pos = 0;
    while pos < requests.len() {
        let end = (pos + batch).min(requests.len());
        let chunk = &requests[pos..end];
        match backend.generate_batch(chunk) {
            Ok(out) => {
                results.extend(out);
                pos = end;
            }
            Err(BackendError::ResourceExhausted { .. }) if batch > 1 => {
                batch = (batch / 2).max(1);
                halvings += 1;
                log::debug!("resource exhaustion; retrying with batch size {batch}");
            }
            Err(err @ BackendError::ResourceExhausted { .. }) => {
                results.push(GenerationResult::failed(&chunk[0].request_id, err.to_string()));
                pos += 1;
            }
            Err(err) => {
                let reason = err.to_string();
                results.extend(chunk.iter().map(|r| GenerationResult::failed(&r.request_id, &reason)));
                pos = end;
            }
        }
    }
    BackoffOutcome { results, effective_batch_size: batch, halvings }
}

/// Everything an evaluator needs to score one shard.
pub struct EvaluationInput<'a> {
    pub records: &'a [ExampleRecord],
    pub backend: &'a mut BackendHandle,
    pub prompts: &'a PromptFile,
    pub spec: &'a BenchmarkSpec,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationOutput {
    pub scores: Vec<RecordScore>,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub issues: Vec<RecordIssue>,
    pub effective_batch_size: usize,
}

impl EvaluationOutput {
    fn issue(&mut self, record_id: &str, status: RecordStatus, reason: String) {
        match status {
            RecordStatus::Skipped => self.skipped += 1,
            RecordStatus::Failed => self.failed += 1,
        }
        self.issues.push(RecordIssue { record_id: record_id.to_owned(), status, reason });
    }
}

/// Default evaluation loop: render each record's prompt (with curated
/// shots when the spec asks for them), generate with backoff, and score.
pub fn evaluate_records<E: Evaluator + ?Sized>(evaluator: &E, input: EvaluationInput<'_>) -> EvaluationOutput {
    let EvaluationInput { records, backend, prompts, spec } = input;
    let initial_batch = spec.generation_batch_size();
    let mut out = EvaluationOutput { effective_batch_size: initial_batch, ..Default::default() };

    let setup = prompts.template(spec.template_name()).and_then(|template| {
        let shots = match spec.num_few_shot() {
            0 => Vec::new(),
            n => select_shots(prompts.shot_pool(), n, 0)?,
        };
        Ok((template, shots))
    });
    let (template, shots) = match setup {
        Ok(v) => v,
        Err(err) => {
            let reason = err.to_string();
            for record in records {
                out.issue(&record.id, RecordStatus::Skipped, reason.clone());
            }
            return out;
        }
    };

    let samples = evaluator.samples_per_record(&spec.task_args).max(1);
    let mut renderable: Vec<&ExampleRecord> = Vec::new();
    let mut requests = Vec::new();
    let mut rendered: Vec<Option<String>> = Vec::with_capacity(records.len());
    for record in records {
        let fields = evaluator.prompt_fields(record);
        let prompt = if shots.is_empty() {
            render_zero_shot(template, &fields)
        } else {
            render_few_shot(template, &shots, &fields)
        };
        match prompt {
            Ok(prompt) => rendered.push(Some(prompt)),
            Err(err) => {
                rendered.push(None);
                out.issue(&record.id, RecordStatus::Skipped, err.to_string());
            }
        }
    }
    for (record, prompt) in records.iter().zip(&rendered) {
        let Some(prompt) = prompt else { continue };
        renderable.push(record);
        for s in 0..samples {
            let request_id = if samples == 1 { record.id.clone() } else { format!("{}#{s}", record.id) };
            let mut request = GenerationRequest::new(request_id, prompt.clone(), spec.max_new_tokens());
            request.temperature = spec.temperature();
            requests.push(request);
        }
    }
    if requests.is_empty() {
        return out;
    }

    let outcome = generate_with_backoff(backend, &requests, initial_batch);
    out.effective_batch_size = outcome.effective_batch_size;
    for (record, results) in renderable.iter().zip(outcome.results.chunks(samples)) {
        if let Some(bad) = results.iter().find(|r| r.is_error()) {
            let reason = bad.error.clone().unwrap_or_else(|| "generation failed".into());
            out.issue(&record.id, RecordStatus::Failed, reason);
            continue;
        }
        let completions: Vec<String> = results.iter().map(|r| r.text.clone()).collect();
        match evaluator.score(record, &completions, &spec.task_args) {
            Ok(values) => {
                out.evaluated += 1;
                out.scores.extend(values.into_iter().map(|(metric, value)| RecordScore {
                    record_id: record.id.clone(),
                    metric,
                    value,
                }));
            }
            Err(reason) => out.issue(&record.id, RecordStatus::Skipped, reason),
        }
    }
    out
}

/// Shared, read-only services a task needs.
pub struct TaskContext<'a> {
    pub registry: &'a Registry,
    pub datasets: &'a DatasetLoader,
    pub prompts: &'a PromptStore,
    pub cache: Option<&'a ReportCache>,
}

/// Something that can hand out a live backend for a descriptor.
pub trait BackendSource {
    fn backend(&mut self, descriptor: &ModelDescriptor) -> Result<&mut BackendHandle, ModelError>;
}

impl BackendSource for BackendHandle {
    fn backend(&mut self, _descriptor: &ModelDescriptor) -> Result<&mut BackendHandle, ModelError> {
        Ok(self)
    }
}

/// Runs one unit end to end. The backend is only requested when the cache
/// cannot answer, so a cache hit performs no generation at all.
pub fn run_task<S: BackendSource + ?Sized>(unit: &TaskUnit, backend: &mut S, ctx: &TaskContext<'_>) -> WorkerReport {
    let started = Instant::now();
    let spec = unit.spec();
    let fail = |reason: String| {
        let mut report = WorkerReport::failed(unit, reason);
        report.wall_time_ms = started.elapsed().as_millis() as u64;
        report
    };
    let evaluator: Arc<dyn Evaluator> = match ctx.registry.resolve_evaluator(&unit.evaluation_function) {
        Ok(e) => e,
        Err(err) => return fail(err.to_string()),
    };
    let dataset = match ctx.datasets.load_dataset(&spec, &unit.language) {
        Ok(d) => d,
        Err(err) => return fail(format!("dataset load failed: {err}")),
    };
    let args = &unit.task_args;
    let prompts = match ctx.prompts.load_prompt_file(&args.prompt_file_category, &args.prompt_file_benchmark_key) {
        Ok(p) => p,
        Err(err) => return fail(err.to_string()),
    };
    let key = CacheKey::new(unit, &prompts.fingerprint, &dataset.version);
    if let Some(cache) = ctx.cache {
        if let Some(mut hit) = cache.lookup(&key) {
            if hit.unit_id == unit.unit_id {
                hit.cache_hit = true;
                return hit;
            }
        }
    }
    let handle = match backend.backend(&unit.model) {
        Ok(h) => h,
        Err(err) => return fail(format!("backend unavailable: {err}")),
    };
    let records = dataset.shard(unit.shard.index, unit.shard.total);
    let output = evaluator.evaluate(EvaluationInput { records, backend: handle, prompts: &prompts, spec: &spec });
    let report = WorkerReport {
        unit_id: unit.unit_id.clone(),
        scores: output.scores,
        evaluated: output.evaluated,
        skipped: output.skipped,
        failed: output.failed,
        issues: output.issues,
        effective_batch_size: output.effective_batch_size.max(1),
        wall_time_ms: started.elapsed().as_millis() as u64,
        cache_hit: false,
        status: UnitStatus::Completed,
        dataset_version: dataset.version.clone(),
        prompt_fingerprint: prompts.fingerprint.clone(),
    };
    if let Some(cache) = ctx.cache {
        if report.failed == 0 {
            if let Err(err) = cache.store(&key, &report) {
                log::warn!("could not write cache entry {key}: {err}");
            }
        }
    }
    report
}
