//! Command-line front end: a scripted `run` mode and a menu-driven
//! `interactive` mode that share one execution pipeline.

pub mod table;
pub mod wizard;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use evalkit_core::config::{load_config, SuiteConfig};
use evalkit_core::engine::ReportCache;
use evalkit_core::model::{discover_models, LongContextPolicy, ModelDescriptor, Quantization, SourceKind};
use evalkit_core::pipeline::{run_suite, RunOptions, Services, SuiteOutcome};
use evalkit_core::registry::builtin::builtin_suite;
use evalkit_core::registry::Registry;
use evalkit_core::results::{compare_models, import_json};

pub use table::{display_results_table, render_results_table};
use wizard::{chart_dir, prompt_model_selection, prompt_task_selection, prompt_visualization, Console, Phase, SessionState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "evalkit", version, about = "Evaluate language models on benchmark suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a suite without prompts.
    Run(RunArgs),
    /// Choose models and benchmarks from menus, then run.
    Interactive(InteractiveArgs),
    /// Print the groups and benchmarks a config defines.
    List(ListArgs),
    /// Compare exported results against the first file.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ExecutionArgs {
    /// Number of parallel workers.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: u16,
    /// Directory receiving results.json, results.csv and charts.
    #[arg(long, default_value = "results")]
    pub output_dir: PathBuf,
    /// Do not read or write the report cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Report cache location (default: $EKA_CACHE_DIR or the user cache dir).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// What to do with prompts longer than the model context: error or truncate_left.
    #[arg(long, default_value = "error")]
    pub long_context_policy: LongContextPolicy,
    /// Directory of prompt files; shipped prompts fill in anything missing.
    #[arg(long)]
    pub prompt_root: Option<PathBuf>,
    /// Local dataset mirror laid out as <dataset>/[<subset>/]<split>.jsonl.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Weight format requested from local loaders: none, int8 or int4.
    #[arg(long, default_value = "none")]
    pub quantization: Quantization,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file; repeat to layer overrides, later files win.
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Local checkpoint directory or provider/model. Repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Comma-separated groups or benchmarks (default: everything).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[command(flatten)]
    pub exec: ExecutionArgs,
}

#[derive(Debug, Args)]
pub struct InteractiveArgs {
    /// Config file(s); the shipped suite is used when omitted.
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// Directory scanned for local checkpoints. Repeatable.
    #[arg(long = "model-root")]
    pub model_roots: Vec<PathBuf>,
    /// API provider whose models are offered. Repeatable.
    #[arg(long = "provider")]
    pub providers: Vec<String>,
    #[command(flatten)]
    pub exec: ExecutionArgs,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Exported results.json files; the first is the baseline.
    #[arg(required = true, num_args = 2..)]
    pub results: Vec<PathBuf>,
}

/// Parses `args` and runs the chosen command against the given streams.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                EXIT_OK
            } else {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            };
        }
    };
    match cli.command {
        Command::Run(args) => run_noninteractive(&args, out, err),
        Command::Interactive(args) => run_interactive(&args, input, out, err),
        Command::List(args) => list(&args, out, err),
        Command::Compare(args) => compare(&args, out, err),
    }
}

fn load(configs: &[PathBuf]) -> Result<SuiteConfig, String> {
    if configs.is_empty() {
        return Ok(builtin_suite());
    }
    load_config(configs).map_err(|e| e.to_string())
}

fn options(exec: &ExecutionArgs, models: Vec<ModelDescriptor>, selection: Vec<String>) -> RunOptions {
    let models = models
        .into_iter()
        .map(|m| if m.source_kind == SourceKind::LocalPath { m.with_quantization(exec.quantization) } else { m })
        .collect();
    RunOptions {
        selection,
        models,
        workers: exec.workers as usize,
        cache_dir: (!exec.no_cache).then(|| exec.cache_dir.clone().unwrap_or_else(ReportCache::default_root)),
        long_context_policy: exec.long_context_policy,
        output_dir: Some(exec.output_dir.clone()),
        ..RunOptions::default()
    }
}

fn services(exec: &ExecutionArgs) -> Services {
    Services::standard(exec.prompt_root.as_deref(), exec.data_root.as_deref())
}

/// Prints tables and file locations; returns the exit code for `outcome`.
fn report(outcome: &SuiteOutcome, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let many = outcome.runs.len() > 1;
    for (i, run) in outcome.runs.iter().enumerate() {
        if many {
            let point: Vec<String> = run.assignment.iter().map(|a| format!("{}={}", a.axis, a.value)).collect();
            let _ = writeln!(out, "Sweep point {} ({})", i + 1, point.join(", "));
        }
        let _ = display_results_table(&run.result, out);
        for path in run.json_path.iter().chain(&run.csv_path) {
            let _ = writeln!(out, "wrote {}", path.display());
        }
        for failed in &run.result.metadata.failed_units {
            let lang = if failed.language.is_empty() { String::new() } else { format!(" [{}]", failed.language) };
            let _ = writeln!(err, "failed: {} on {}{}: {}", failed.task, failed.model, lang, failed.reason);
        }
        if run.aborted {
            let _ = writeln!(err, "run aborted: every worker crashed; results above are partial");
        }
    }
    if outcome.has_failures() {
        EXIT_RUN_FAILED
    } else {
        EXIT_OK
    }
}

fn check_model(reference: &str) -> Result<ModelDescriptor, String> {
    let desc = ModelDescriptor::parse_reference(reference);
    if desc.source_kind == SourceKind::LocalPath && !Path::new(&desc.identifier).is_dir() {
        return Err(format!("--model {reference:?}: no such directory and not a known provider/model"));
    }
    Ok(desc)
}

/// Scripted mode. Input problems exit 2 before anything runs; unit
/// failures exit 1 after exporting whatever completed.
pub fn run_noninteractive(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let usage = |err: &mut dyn Write, msg: String| {
        let _ = writeln!(err, "error: {msg}");
        EXIT_USAGE
    };
    let config = match load(&args.configs) {
        Ok(c) => c,
        Err(msg) => return usage(err, msg),
    };
    let registry = match Registry::from_config(&config) {
        Ok(r) => r,
        Err(e) => return usage(err, e.to_string()),
    };
    if let Err(e) = registry.resolve_selection(&args.tasks) {
        return usage(err, format!("--tasks: {e}"));
    }
    let mut models = Vec::new();
    for reference in &args.models {
        match check_model(reference) {
            Ok(m) => models.push(m),
            Err(msg) => return usage(err, msg),
        }
    }
    match run_suite(&config, &options(&args.exec, models, args.tasks.clone()), &services(&args.exec)) {
        Ok(outcome) => report(&outcome, out, err),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUN_FAILED
        }
    }
}

/// Menu-driven mode over `input`/`out`.
pub fn run_interactive(args: &InteractiveArgs, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let config = match load(&args.configs) {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let registry = match Registry::from_config(&config) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let discovery = discover_models(&args.model_roots, &args.providers);
    for finding in &discovery.findings {
        let _ = writeln!(err, "warning: {finding}");
    }

    let mut state = SessionState::default();
    let mut console = Console::new(input, out);
    let outcome = (|| -> Result<i32, wizard::WizardError> {
        state.models = prompt_model_selection(&discovery.models, &mut console)?;
        state.advance(Phase::TaskSelect)?;
        state.selection = prompt_task_selection(&registry, &mut console)?;
        state.advance(Phase::Running)?;
        console.say(&format!(
            "Running {} benchmark(s) on {} model(s) with {} worker(s)...",
            state.selection.len(),
            state.models.len(),
            args.exec.workers
        ))?;
        let opts = options(&args.exec, state.models.clone(), state.selection.clone());
        let outcome = match run_suite(&config, &opts, &services(&args.exec)) {
            Ok(o) => o,
            Err(e) => {
                console.say(&format!("error: {e}"))?;
                return Ok(EXIT_RUN_FAILED);
            }
        };
        state.advance(Phase::Results)?;
        let mut buffer = Vec::new();
        let code = report(&outcome, &mut buffer, err);
        console.say(String::from_utf8_lossy(&buffer).trim_end())?;
        if let Some(first) = outcome.runs.first() {
            state.advance(Phase::Viz)?;
            console.say("Visualize the results.")?;
            prompt_visualization(&first.result, &chart_dir(&args.exec.output_dir), &mut console)?;
            state.advance(Phase::Results)?;
        }
        Ok(code)
    })();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn list(args: &ListArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let registry = match load(&args.configs).and_then(|c| Registry::from_config(&c).map_err(|e| e.to_string())) {
        Ok(r) => r,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    for group in registry.list_groups() {
        let _ = writeln!(out, "{group}");
        for name in registry.list_subtasks(group).unwrap_or_default() {
            let _ = writeln!(out, "  {name}");
        }
    }
    EXIT_OK
}

fn compare(args: &CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut results = Vec::new();
    for path in &args.results {
        match import_json(path) {
            Ok(r) => results.push(r),
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_USAGE;
            }
        }
    }
    match compare_models(&results) {
        Ok(cmp) => {
            let _ = write!(out, "{}", cmp.render());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUN_FAILED
        }
    }
}
