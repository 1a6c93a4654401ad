//! Aggregation of worker reports into run results, with JSON/CSV export,
//! charts and cross-model comparison.

mod chart;
mod compare;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chart::{read_sidecar, render_chart, sidecar_path, ChartKind, ChartOutput, ChartSelection};
pub use compare::{compare_models, Comparison, ComparisonCell, ComparisonRow};

use crate::canonical::to_canonical_pretty;
use crate::config::SweepAssignment;
use crate::engine::{TaskUnit, WorkerReport};
use crate::model::{LongContextPolicy, ModelDescriptor};
use crate::spec::TaskArgs;

/// Task name used for per-model average rows in tables and CSV.
pub const AVERAGE_TASK: &str = "AVERAGE";
pub const CSV_HEADER: &str = "model,task,language,metric,score,support";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("report {0} does not belong to any planned unit")]
    UnplannedUnit(String),
    #[error("nothing left to chart after filtering")]
    EmptySelection,
    #[error("unknown chart kind {0:?} (expected bar, heatmap or radar)")]
    UnknownChartKind(String),
    #[error("a bar chart shows one model; the selection has {0}")]
    NeedsOneModel(usize),
    #[error("comparison needs at least two models")]
    NotEnoughModels,
    #[error("the results share no (task, language, metric) entries")]
    NoOverlap,
    #[error("cannot write {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read results from {}: {message}", .path.display())]
    Import { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub task: String,
    pub language: String,
    pub metric: String,
    /// Mean over records, in [0, 1].
    pub score: f64,
    /// Number of records behind the score.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAverage {
    pub model: String,
    /// Unweighted mean of the primary-metric rows.
    pub score: f64,
    /// Number of (task, language) rows averaged.
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkInfo {
    pub name: String,
    pub version: String,
}

impl Default for FrameworkInfo {
    fn default() -> Self {
        Self { name: "evalkit".into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkVersion {
    pub task: String,
    pub language: String,
    pub evaluation_function: String,
    pub primary_metric: String,
    pub task_args: TaskArgs,
    pub dataset_version: String,
    pub prompt_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit_id: String,
    pub model: String,
    pub task: String,
    pub language: String,
    pub shard_index: usize,
    pub shard_total: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub effective_batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedUnit {
    pub unit_id: String,
    pub model: String,
    pub task: String,
    pub language: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub workers: usize,
    pub cache_enabled: bool,
    pub cache_dir: Option<String>,
    pub long_context_policy: LongContextPolicy,
    pub sweep_assignment: Vec<SweepAssignment>,
    pub os: String,
    pub arch: String,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            cache_enabled: false,
            cache_dir: None,
            long_context_policy: LongContextPolicy::default(),
            sweep_assignment: Vec::new(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTiming {
    pub unit_id: String,
    pub wall_time_ms: u64,
    pub cache_hit: bool,
}

/// Everything that varies between otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub units: Vec<UnitTiming>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub framework: FrameworkInfo,
    pub models: Vec<ModelDescriptor>,
    pub benchmarks: Vec<BenchmarkVersion>,
    pub units: Vec<UnitSummary>,
    pub failed_units: Vec<FailedUnit>,
    pub system: SystemConfig,
    pub timestamps: Timestamps,
    pub metric_notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub metadata: RunMetadata,
    pub rows: Vec<ResultRow>,
    pub averages: Vec<ModelAverage>,
}

impl RunResult {
    /// Primary metric of `task`, as recorded in the benchmark versions.
    pub fn primary_metric(&self, task: &str) -> Option<&str> {
        self.metadata.benchmarks.iter().find(|b| b.task == task).map(|b| b.primary_metric.as_str())
    }

    /// Rows carrying each task's primary metric.
    pub fn primary_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| self.primary_metric(&r.task) == Some(r.metric.as_str()))
    }

    pub fn models(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.model.as_str()) {
                seen.push(&row.model);
            }
        }
        seen
    }

    /// Same result with all run-dependent timing cleared.
    pub fn without_timestamps(&self) -> Self {
        let mut copy = self.clone();
        copy.metadata.timestamps = Timestamps::default();
        copy
    }
}

fn metric_notes() -> BTreeMap<String, String> {
    [
        ("bleu", "sentence-level BLEU-4 on whitespace tokens; add-one smoothing on orders 2-4 with no matches"),
        ("chrf", "character n-grams 1-6, beta 2, whitespace ignored"),
        ("exact_match", "answers normalized: lowercase, punctuation and articles removed"),
        ("token_f1", "token overlap F1 after answer normalization"),
        ("rouge_l", "LCS F-measure on lowercased tokens, articles kept"),
        ("pass_at_k", "unbiased estimator with k = 1 over sandboxed executions"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect()
}

fn language_key(unit: &TaskUnit) -> (String, String, String) {
    (unit.model.label(), unit.spec_name.clone(), unit.language.clone())
}

#[derive(Default)]
struct Accumulator {
    metrics: IndexMap<String, (f64, usize)>,
}

/// Folds reports into per-(model, task, language, metric) means. Shards of
/// one task are pooled record by record before averaging; per-model
/// averages weight every task equally. Rows follow plan order and metrics
/// sort by name, so the report order does not matter.
pub fn aggregate(reports: &[WorkerReport], plan: &[TaskUnit]) -> Result<RunResult, ResultsError> {
    let by_id: HashMap<&str, &TaskUnit> = plan.iter().map(|u| (u.unit_id.as_str(), u)).collect();
    let mut report_for: HashMap<&str, &WorkerReport> = HashMap::new();
    for report in reports {
        if !by_id.contains_key(report.unit_id.as_str()) {
            return Err(ResultsError::UnplannedUnit(report.unit_id.clone()));
        }
        report_for.insert(&report.unit_id, report);
    }

    let mut metadata = RunMetadata { metric_notes: metric_notes(), ..Default::default() };
    let mut tasks: IndexMap<(String, String, String), Accumulator> = IndexMap::new();
    let mut primary: IndexMap<(String, String, String), String> = IndexMap::new();

    for unit in plan {
        if !metadata.models.contains(&unit.model) {
            metadata.models.push(unit.model.clone());
        }
        let key = language_key(unit);
        let Some(report) = report_for.get(unit.unit_id.as_str()) else {
            metadata.failed_units.push(failed_unit(unit, "no report received"));
            continue;
        };
        metadata.timestamps.units.push(UnitTiming {
            unit_id: unit.unit_id.clone(),
            wall_time_ms: report.wall_time_ms,
            cache_hit: report.cache_hit,
        });
        if let crate::engine::UnitStatus::Failed { reason } = &report.status {
            metadata.failed_units.push(failed_unit(unit, reason));
            continue;
        }
        metadata.units.push(UnitSummary {
            unit_id: unit.unit_id.clone(),
            model: key.0.clone(),
            task: unit.spec_name.clone(),
            language: unit.language.clone(),
            shard_index: unit.shard.index,
            shard_total: unit.shard.total,
            evaluated: report.evaluated,
            skipped: report.skipped,
            failed: report.failed,
            effective_batch_size: report.effective_batch_size,
        });
        let seen = metadata.benchmarks.iter().any(|b| b.task == unit.spec_name && b.language == unit.language);
        if !seen {
            metadata.benchmarks.push(BenchmarkVersion {
                task: unit.spec_name.clone(),
                language: unit.language.clone(),
                evaluation_function: unit.evaluation_function.clone(),
                primary_metric: unit.primary_metric().to_owned(),
                task_args: unit.task_args.clone(),
                dataset_version: report.dataset_version.clone(),
                prompt_fingerprint: report.prompt_fingerprint.clone(),
            });
        }
        primary.insert(key.clone(), unit.primary_metric().to_owned());
        let acc = tasks.entry(key).or_default();
        for score in &report.scores {
            let slot = acc.metrics.entry(score.metric.clone()).or_insert((0.0, 0));
            slot.0 += score.value;
            slot.1 += 1;
        }
    }

    let mut rows = Vec::new();
    for ((model, task, language), acc) in &tasks {
        let mut metrics: Vec<_> = acc.metrics.iter().collect();
        metrics.sort_by(|a, b| a.0.cmp(b.0));
        for (metric, (sum, count)) in metrics {
            rows.push(ResultRow {
                model: model.clone(),
                task: task.clone(),
                language: language.clone(),
                metric: metric.clone(),
                score: sum / *count as f64,
                support: *count,
            });
        }
    }

    let averages = compute_averages(&rows, |row| {
        primary.get(&(row.model.clone(), row.task.clone(), row.language.clone())).map(String::as_str)
            == Some(row.metric.as_str())
    });
    Ok(RunResult { metadata, rows, averages })
}

/// Per-model unweighted mean over the rows `is_primary` accepts.
pub fn compute_averages(rows: &[ResultRow], is_primary: impl Fn(&ResultRow) -> bool) -> Vec<ModelAverage> {
    let mut sums: IndexMap<&str, (f64, usize)> = IndexMap::new();
    for row in rows.iter().filter(|r| is_primary(r)) {
        let slot = sums.entry(&row.model).or_insert((0.0, 0));
        slot.0 += row.score;
        slot.1 += 1;
    }
    sums.into_iter()
        .map(|(model, (sum, n))| ModelAverage { model: model.to_owned(), score: sum / n as f64, tasks: n })
        .collect()
}

fn failed_unit(unit: &TaskUnit, reason: &str) -> FailedUnit {
    FailedUnit {
        unit_id: unit.unit_id.clone(),
        model: unit.model.label(),
        task: unit.spec_name.clone(),
        language: unit.language.clone(),
        reason: reason.to_owned(),
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ResultsError> {
    let io = |source| ResultsError::Io { path: path.to_owned(), source };
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Key-sorted, pretty-printed JSON with a trailing newline.
pub fn to_json_string(result: &RunResult) -> String {
    let mut text = to_canonical_pretty(result).expect("results serialize");
    text.push('\n');
    text
}

pub fn export_json(result: &RunResult, path: &Path) -> Result<(), ResultsError> {
    write_atomic(path, to_json_string(result).as_bytes())
}

pub fn import_json(path: &Path) -> Result<RunResult, ResultsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ResultsError::Import { path: path.to_owned(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| ResultsError::Import { path: path.to_owned(), message: e.to_string() })
}

/// Score as shown to people: percent with two decimals.
pub fn format_score(score: f64) -> String {
    format!("{:.2}", score * 100.0)
}

/// Table body shared by the CSV export and the terminal table: one line per
/// row, then one AVERAGE line per model.
pub fn table_records(result: &RunResult) -> Vec<[String; 6]> {
    let mut out: Vec<[String; 6]> = result
        .rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.task.clone(),
                r.language.clone(),
                r.metric.clone(),
                format_score(r.score),
                r.support.to_string(),
            ]
        })
        .collect();
    for avg in &result.averages {
        out.push([
            avg.model.clone(),
            AVERAGE_TASK.into(),
            String::new(),
            "primary".into(),
            format_score(avg.score),
            avg.tasks.to_string(),
        ]);
    }
    out
}

pub fn to_csv_string(result: &RunResult) -> String {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for record in table_records(result) {
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn export_csv(result: &RunResult, path: &Path) -> Result<(), ResultsError> {
    write_atomic(path, to_csv_string(result).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RecordScore, Shard, UnitStatus};
    use serde_json::json;

    fn args(primary: &str) -> TaskArgs {
        serde_json::from_value(json!({
            "dataset_name": "d", "dataset_split": "s", "num_few_shot": 0,
            "prompt_template_name_zeroshot": "t",
            "prompt_file_benchmark_key": "k", "prompt_file_category": "c",
            "primary_metric": primary
        }))
        .unwrap()
    }

    pub(crate) fn unit(model: &str, spec: &str, shard: Shard) -> TaskUnit {
        TaskUnit::new(ModelDescriptor::local(model), spec, "core.exact_match.evaluate", args("accuracy"), "", shard)
    }

    pub(crate) fn report(unit: &TaskUnit, values: &[f64]) -> WorkerReport {
        WorkerReport {
            unit_id: unit.unit_id.clone(),
            scores: values
                .iter()
                .enumerate()
                .map(|(i, v)| RecordScore { record_id: format!("r{i}"), metric: "accuracy".into(), value: *v })
                .collect(),
            evaluated: values.len(),
            skipped: 0,
            failed: 0,
            issues: vec![],
            effective_batch_size: 8,
            wall_time_ms: 5,
            cache_hit: false,
            status: UnitStatus::Completed,
            dataset_version: "dv".into(),
            prompt_fingerprint: "pf".into(),
        }
    }

    fn ones(n: usize, of: usize) -> Vec<f64> {
        (0..of).map(|i| if i < n { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn shards_merge_weighted_by_records() {
        let a = unit("m", "T", Shard { index: 0, total: 2 });
        let b = unit("m", "T", Shard { index: 1, total: 2 });
        let result = aggregate(&[report(&a, &ones(8, 10)), report(&b, &ones(6, 10))], &[a, b]).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0].score, 14.0 / 20.0);
        assert_eq!(result.rows[0].support, 20);
    }

    #[test]
    fn averages_are_unweighted_across_tasks() {
        let a = unit("m", "A", Shard::single());
        let b = unit("m", "B", Shard::single());
        let result = aggregate(&[report(&a, &ones(1, 2)), report(&b, &ones(7, 10))], &[a, b]).unwrap();
        assert_eq!(result.averages.len(), 1);
        assert_eq!(result.averages[0].score, (0.5 + 0.7) / 2.0);
    }

    #[test]
    fn report_order_does_not_matter() {
        let units: Vec<_> = ["A", "B", "C"].iter().map(|s| unit("m", s, Shard::single())).collect();
        let reports: Vec<_> = units.iter().enumerate().map(|(i, u)| report(u, &ones(i, 3))).collect();
        let mut reversed = reports.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reports, &units).unwrap(), aggregate(&reversed, &units).unwrap());
    }

    #[test]
    fn failed_units_are_flagged_and_excluded() {
        let a = unit("m", "A", Shard::single());
        let b = unit("m", "B", Shard::single());
        let result =
            aggregate(&[report(&a, &[1.0]), WorkerReport::failed(&b, "boom")], &[a, b.clone()]).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.averages[0].score, 1.0);
        assert_eq!(result.metadata.failed_units[0].unit_id, b.unit_id);
        assert_eq!(result.metadata.failed_units[0].reason, "boom");
    }

    #[test]
    fn unplanned_report_rejected() {
        let a = unit("m", "A", Shard::single());
        let stray = unit("m", "Z", Shard::single());
        assert!(matches!(aggregate(&[report(&stray, &[1.0])], &[a]), Err(ResultsError::UnplannedUnit(_))));
    }

    #[test]
    fn csv_rendering_rule() {
        let result = RunResult {
            rows: vec![ResultRow {
                model: "m".into(),
                task: "PIQA".into(),
                language: String::new(),
                metric: "accuracy".into(),
                score: 0.731,
                support: 1838,
            }],
            ..Default::default()
        };
        let csv = to_csv_string(&result);
        assert_eq!(csv, "model,task,language,metric,score,support\nm,PIQA,,accuracy,73.10,1838\n");
        assert_eq!(to_csv_string(&RunResult::default()), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let a = unit("m", "A", Shard::single());
        let result = aggregate(&[report(&a, &[1.0, 0.0, 1.0])], &[a]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("r1.json");
        let second = dir.path().join("r2.json");
        export_json(&result, &first).unwrap();
        let back = import_json(&first).unwrap();
        assert_eq!(back, result);
        export_json(&back, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }
}
