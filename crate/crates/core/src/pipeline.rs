//! End-to-end run of a suite: sweep expansion, planning, distributed
//! execution, aggregation and export. Both CLI modes go through here.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::{expand_sweeps, ConfigError, SuiteConfig, SweepAssignment};
use crate::engine::{plan_tasks, run_distributed, EngineError, PlanOptions, ReportCache, WorkerContext};
use crate::model::{BackendFactory, BackendRegistry, LongContextPolicy, MockLoader, ModelDescriptor};
use crate::prompts::PromptStore;
use crate::registry::{DatasetLoader, EvaluatorRegistry, Registry, RegistryError};
use crate::results::{aggregate, export_csv, export_json, ResultsError, RunResult, SystemConfig};

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";

/// Pluggable collaborators: where backends, datasets and prompts come from.
#[derive(Clone)]
pub struct Services {
    pub factory: Arc<dyn BackendFactory>,
    pub datasets: Arc<DatasetLoader>,
    pub prompts: PromptStore,
    pub evaluators: EvaluatorRegistry,
}

impl Services {
    /// Local loaders for mock checkpoints, API providers from the
    /// environment, datasets from `data_root` when given, and prompt files
    /// from `prompt_root` with the shipped files filling any gaps.
    pub fn standard(prompt_root: Option<&Path>, data_root: Option<&Path>) -> Self {
        let mut factory = BackendRegistry::new();
        factory.register_loader(Arc::new(MockLoader::new()));
        let datasets = match data_root {
            Some(root) => DatasetLoader::with_mirror(root),
            None => DatasetLoader::default(),
        };
        let prompts = match prompt_root {
            Some(root) => PromptStore::new(root).with_embedded_fallback(),
            None => PromptStore::embedded(),
        };
        Self {
            factory: Arc::new(factory),
            datasets: Arc::new(datasets),
            prompts,
            evaluators: EvaluatorRegistry::with_builtins(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Group or spec names; empty selects every registered spec.
    pub selection: Vec<String>,
    pub models: Vec<ModelDescriptor>,
    pub workers: usize,
    /// `None` disables the report cache.
    pub cache_dir: Option<PathBuf>,
    pub long_context_policy: LongContextPolicy,
    /// `None` skips writing files.
    pub output_dir: Option<PathBuf>,
    pub plan: PlanOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            selection: Vec::new(),
            models: Vec::new(),
            workers: 1,
            cache_dir: None,
            long_context_policy: LongContextPolicy::default(),
            output_dir: None,
            plan: PlanOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub assignment: Vec<SweepAssignment>,
    pub result: RunResult,
    pub json_path: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
    /// Every worker died before the plan finished.
    pub aborted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub runs: Vec<SweepRun>,
}

impl SuiteOutcome {
    /// True when any unit failed or any run aborted.
    pub fn has_failures(&self) -> bool {
        self.runs.iter().any(|r| r.aborted || !r.result.metadata.failed_units.is_empty())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Results(#[from] ResultsError),
}

/// Output directory for sweep point `index` of `total`.
pub fn run_dir(base: &Path, index: usize, total: usize) -> PathBuf {
    if total <= 1 {
        base.to_owned()
    } else {
        base.join(format!("sweep-{:02}", index + 1))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs every sweep point of `config` in turn. Unit failures do not stop
/// the run: they are recorded in each result's metadata and the partial
/// results are still exported.
pub fn run_suite(config: &SuiteConfig, options: &RunOptions, services: &Services) -> Result<SuiteOutcome, PipelineError> {
    let points = expand_sweeps(config)?;
    let cache = options.cache_dir.as_ref().map(ReportCache::new);
    let mut outcome = SuiteOutcome::default();
    for (index, point) in points.iter().enumerate() {
        let started_at = now();
        let registry = Registry::from_config_with(point, services.evaluators.clone())?;
        let selection: Vec<String> = if options.selection.is_empty() {
            registry.specs().map(|s| s.name.clone()).collect()
        } else {
            options.selection.clone()
        };
        let plan = plan_tasks(
            &registry,
            &selection,
            &options.models,
            options.workers,
            &options.plan,
            Some(&services.datasets),
        )?;
        let ctx = WorkerContext {
            registry,
            datasets: services.datasets.clone(),
            prompts: services.prompts.clone(),
            cache: cache.clone(),
            factory: services.factory.clone(),
            long_context_policy: options.long_context_policy,
        };
        let (reports, aborted) = match run_distributed(&plan, options.workers, &ctx) {
            Ok(reports) => (reports, false),
            Err(EngineError::Aborted { partial, .. }) => {
                log::error!("all workers died; keeping {} finished units", partial.len());
                (partial, true)
            }
            Err(other) => return Err(other.into()),
        };
        let mut result = aggregate(&reports, &plan)?;
        result.metadata.system = SystemConfig {
            workers: options.workers,
            cache_enabled: cache.is_some(),
            cache_dir: options.cache_dir.as_ref().map(|p| p.display().to_string()),
            long_context_policy: options.long_context_policy,
            sweep_assignment: point.sweep_assignment.clone(),
            ..SystemConfig::default()
        };
        result.metadata.timestamps.started_at = Some(started_at);
        result.metadata.timestamps.finished_at = Some(now());

        let (mut json_path, mut csv_path) = (None, None);
        if let Some(base) = &options.output_dir {
            let dir = run_dir(base, index, points.len());
            let (json, csv) = (dir.join(RESULTS_JSON), dir.join(RESULTS_CSV));
            export_json(&result, &json)?;
            export_csv(&result, &csv)?;
            json_path = Some(json);
            csv_path = Some(csv);
        }
        outcome.runs.push(SweepRun { assignment: point.sweep_assignment.clone(), result, json_path, csv_path, aborted });
    }
    Ok(outcome)
}
