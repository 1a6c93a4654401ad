//! Menu-driven session over injectable input and output streams.
//!
//! Every prompt takes a comma-separated list of menu numbers or names, or
//! `all`. Three invalid answers to the same prompt end the session.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use evalkit_core::model::{ModelDescriptor, Provider, SourceKind};
use evalkit_core::registry::Registry;
use evalkit_core::results::{render_chart, ChartKind, ChartOutput, ChartSelection, RunResult};
use thiserror::Error;

pub const MAX_STRIKES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ModelSelect,
    TaskSelect,
    Running,
    Results,
    Viz,
}

impl Phase {
    /// Whether the session may move from `self` to `next`.
    pub fn allows(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (ModelSelect, TaskSelect) | (TaskSelect, Running) | (Running, Results) | (Results, Viz) | (Viz, Results)
        )
    }
}

#[derive(Debug, Error)]
pub enum WizardError {
    #[error("{what}: too many invalid entries. {guidance}")]
    TooManyInvalid { what: &'static str, guidance: &'static str },
    #[error("input ended before the session finished")]
    InputClosed,
    #[error("illegal phase change {from:?} -> {to:?}")]
    Phase { from: Phase, to: Phase },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where the session is and what has been chosen so far.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub phase: Phase,
    pub models: Vec<ModelDescriptor>,
    pub selection: Vec<String>,
    pub history: Vec<Phase>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self { phase: Phase::ModelSelect, models: Vec::new(), selection: Vec::new(), history: vec![Phase::ModelSelect] }
    }
}

impl SessionState {
    pub fn advance(&mut self, next: Phase) -> Result<(), WizardError> {
        if !self.phase.allows(next) {
            return Err(WizardError::Phase { from: self.phase, to: next });
        }
        self.phase = next;
        self.history.push(next);
        Ok(())
    }
}

/// Line-oriented prompt helper shared by the menus.
pub struct Console<'a> {
    input: &'a mut dyn BufRead,
    output: &'a mut dyn Write,
}

impl<'a> Console<'a> {
    pub fn new(input: &'a mut dyn BufRead, output: &'a mut dyn Write) -> Self {
        Self { input, output }
    }

    pub fn say(&mut self, text: &str) -> io::Result<()> {
        writeln!(self.output, "{text}")
    }

    fn ask(&mut self, prompt: &str) -> Result<String, WizardError> {
        write!(self.output, "{prompt}> ")?;
        self.output.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            writeln!(self.output)?;
            return Err(WizardError::InputClosed);
        }
        Ok(line.trim().to_owned())
    }

    /// Asks until `parse` accepts the answer, printing its complaint after
    /// each rejection.
    fn ask_until<T>(
        &mut self,
        prompt: &str,
        what: &'static str,
        guidance: &'static str,
        mut parse: impl FnMut(&str) -> Result<T, String>,
    ) -> Result<T, WizardError> {
        for _ in 0..MAX_STRIKES {
            let answer = self.ask(prompt)?;
            match parse(&answer) {
                Ok(v) => return Ok(v),
                Err(msg) => self.say(&format!("error: {msg}"))?,
            }
        }
        self.say(&format!("Giving up on {what}. {guidance}"))?;
        Err(WizardError::TooManyInvalid { what, guidance })
    }
}

/// Resolves a comma list of 1-based indices or names (case-insensitive)
/// against `items`. `all` picks everything. Order follows the answer and
/// duplicates are dropped.
pub fn parse_choices(answer: &str, items: &[String]) -> Result<Vec<usize>, String> {
    if answer.eq_ignore_ascii_case("all") {
        return Ok((0..items.len()).collect());
    }
    let mut picked = Vec::new();
    for token in answer.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let index = match token.parse::<usize>() {
            Ok(n) if (1..=items.len()).contains(&n) => n - 1,
            Ok(n) => return Err(format!("{n} is out of range (1-{})", items.len())),
            Err(_) => items
                .iter()
                .position(|i| i.eq_ignore_ascii_case(token))
                .ok_or_else(|| format!("{token:?} is not one of the listed choices"))?,
        };
        if !picked.contains(&index) {
            picked.push(index);
        }
    }
    if picked.is_empty() {
        return Err("choose at least one entry".into());
    }
    Ok(picked)
}

fn print_menu(console: &mut Console<'_>, title: &str, items: &[String]) -> io::Result<()> {
    console.say(title)?;
    for (i, item) in items.iter().enumerate() {
        console.say(&format!("  {}. {item}", i + 1))?;
    }
    Ok(())
}

fn model_entry(token: &str) -> Result<ModelDescriptor, String> {
    let desc = ModelDescriptor::parse_reference(token);
    if desc.source_kind == SourceKind::ApiProvider || Path::new(token).is_dir() {
        return Ok(desc);
    }
    let providers: Vec<&str> = Provider::ALL.iter().map(|p| p.name()).collect();
    Err(format!("{token:?} is neither a model directory nor provider/model with provider one of {}", providers.join(", ")))
}

/// Numbered list of discovered models. Answers may mix menu numbers with
/// a local checkpoint path or a `provider/model` name.
pub fn prompt_model_selection(
    discovered: &[ModelDescriptor],
    console: &mut Console<'_>,
) -> Result<Vec<ModelDescriptor>, WizardError> {
    let labels: Vec<String> = discovered
        .iter()
        .map(|d| match d.source_kind {
            SourceKind::LocalPath => format!("{} (local)", d.identifier),
            SourceKind::ApiProvider => format!("{} (api)", d.identifier),
        })
        .collect();
    print_menu(console, "Available models:", &labels)?;
    console.say("Enter numbers from the list, a local model path, or provider/model (comma-separated).")?;
    let names: Vec<String> = discovered.iter().map(|d| d.identifier.clone()).collect();
    console.ask_until(
        "models",
        "model selection",
        "Pass a checkpoint directory containing weights, or one of openai/, gemini/, anthropic/ followed by a model name.",
        |answer| {
            if answer.eq_ignore_ascii_case("all") {
                return if discovered.is_empty() { Err("no models were discovered".into()) } else { Ok(discovered.to_vec()) };
            }
            let mut chosen: Vec<ModelDescriptor> = Vec::new();
            for token in answer.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let desc = match token.parse::<usize>() {
                    Ok(n) if (1..=discovered.len()).contains(&n) => discovered[n - 1].clone(),
                    Ok(n) => return Err(format!("{n} is out of range (1-{})", discovered.len())),
                    Err(_) => match names.iter().position(|m| m == token) {
                        Some(i) => discovered[i].clone(),
                        None => model_entry(token)?,
                    },
                };
                if !chosen.contains(&desc) {
                    chosen.push(desc);
                }
            }
            if chosen.is_empty() {
                return Err("choose at least one model".into());
            }
            Ok(chosen)
        },
    )
}

/// Groups first, then benchmarks within each chosen group. `all` at the
/// group level selects every registered benchmark directly.
pub fn prompt_task_selection(registry: &Registry, console: &mut Console<'_>) -> Result<Vec<String>, WizardError> {
    let groups: Vec<String> = registry.list_groups().into_iter().map(str::to_owned).collect();
    let labels: Vec<String> = groups
        .iter()
        .map(|g| {
            let n = registry.list_subtasks(g).map(|s| s.len()).unwrap_or(0);
            format!("{g} ({n} benchmark{})", if n == 1 { "" } else { "s" })
        })
        .collect();
    print_menu(console, "Task groups:", &labels)?;
    let guidance = "Answer with numbers or names from the list, comma-separated, or 'all'.";
    for _ in 0..MAX_STRIKES {
        let (all, picked) = console.ask_until("groups", "group selection", guidance, |answer| {
            Ok((answer.eq_ignore_ascii_case("all"), parse_choices(answer, &groups)?))
        })?;
        if all {
            return Ok(registry.specs().map(|s| s.name.clone()).collect());
        }
        let mut selection: Vec<String> = Vec::new();
        for gi in picked {
            let group = &groups[gi];
            let subtasks: Vec<String> =
                registry.list_subtasks(group).unwrap_or_default().into_iter().map(str::to_owned).collect();
            if subtasks.is_empty() {
                continue;
            }
            print_menu(console, &format!("Benchmarks in {group}:"), &subtasks)?;
            let chosen = console.ask_until("benchmarks", "benchmark selection", guidance, |answer| {
                parse_choices(answer, &subtasks)
            })?;
            selection.extend(chosen.into_iter().map(|i| subtasks[i].clone()));
        }
        if !selection.is_empty() {
            // Registry order, so equivalent choices plan identically.
            return Ok(registry.specs().map(|s| s.name.clone()).filter(|n| selection.contains(n)).collect());
        }
        console.say("error: nothing selected; choose again")?;
    }
    Err(WizardError::TooManyInvalid { what: "task selection", guidance })
}

/// Chart loop: kind, then models, then tasks; repeats until `done`.
pub fn prompt_visualization(
    result: &RunResult,
    chart_dir: &Path,
    console: &mut Console<'_>,
) -> Result<Vec<ChartOutput>, WizardError> {
    let models: Vec<String> = result.models().into_iter().map(str::to_owned).collect();
    let mut tasks: Vec<String> = Vec::new();
    for row in result.primary_rows() {
        if !tasks.contains(&row.task) {
            tasks.push(row.task.clone());
        }
    }
    let mut written = Vec::new();
    let guidance = "Chart kinds are bar, heatmap and radar; type 'done' to finish.";
    loop {
        let kind = console.ask_until("chart kind (bar, heatmap, radar, or done)", "chart kind", guidance, |answer| {
            if answer.eq_ignore_ascii_case("done") {
                return Ok(None);
            }
            answer.parse::<ChartKind>().map(Some).map_err(|e| e.to_string())
        })?;
        let Some(kind) = kind else { break };
        if models.is_empty() {
            console.say("error: there are no scores to plot")?;
            continue;
        }
        print_menu(console, "Models:", &models)?;
        let model_pick = console.ask_until("models", "chart models", guidance, |answer| {
            let picked = parse_choices(answer, &models)?;
            if kind == ChartKind::Bar && picked.len() != 1 {
                return Err("a bar chart shows exactly one model".into());
            }
            Ok(picked)
        })?;
        print_menu(console, "Tasks:", &tasks)?;
        let task_pick = console.ask_until("tasks", "chart tasks", guidance, |answer| parse_choices(answer, &tasks))?;
        let selection = ChartSelection {
            models: model_pick.into_iter().map(|i| models[i].clone()).collect(),
            tasks: task_pick.into_iter().map(|i| tasks[i].clone()).collect(),
        };
        let path = chart_dir.join(format!("{}-{}.svg", kind.name(), written.len() + 1));
        match render_chart(result, kind.name(), &selection, &path) {
            Ok(out) => {
                console.say(&format!("Wrote {} and {}", out.image.display(), out.sidecar.display()))?;
                written.push(out);
            }
            Err(err) => console.say(&format!("error: {err}"))?,
        }
    }
    Ok(written)
}

/// Directory charts go to, below the run's output directory.
pub fn chart_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("charts")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<T>(input: &str, f: impl FnOnce(&mut Console<'_>) -> T) -> (T, String) {
        let mut reader = io::Cursor::new(input.as_bytes().to_vec());
        let mut out = Vec::new();
        let value = {
            let mut console = Console::new(&mut reader, &mut out);
            f(&mut console)
        };
        (value, String::from_utf8(out).unwrap())
    }

    #[test]
    fn choices_accept_numbers_names_and_all() {
        let items: Vec<String> = ["SQuAD", "BoolQ", "QuAC"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_choices("1,3", &items), Ok(vec![0, 2]));
        assert_eq!(parse_choices("squad, BoolQ", &items), Ok(vec![0, 1]));
        assert_eq!(parse_choices("all", &items), Ok(vec![0, 1, 2]));
        assert!(parse_choices("4", &items).is_err());
        assert!(parse_choices("", &items).is_err());
    }

    #[test]
    fn phases_follow_the_flow() {
        let mut s = SessionState::default();
        assert!(s.advance(Phase::Running).is_err());
        for p in [Phase::TaskSelect, Phase::Running, Phase::Results, Phase::Viz, Phase::Results] {
            s.advance(p).unwrap();
        }
        assert!(s.advance(Phase::ModelSelect).is_err());
    }

    #[test]
    fn model_selection_reprompts_then_gives_up() {
        let found = vec![ModelDescriptor::api("openai/gpt-4o")];
        let (res, out) = run("/no/such/dir\n7\nnope/x\n", |c| prompt_model_selection(&found, c));
        assert!(matches!(res, Err(WizardError::TooManyInvalid { .. })));
        assert_eq!(out.matches("error:").count(), 3);
        let (res, _) = run("/no/such/dir\n1\n", |c| prompt_model_selection(&found, c));
        assert_eq!(res.unwrap(), found);
    }

    #[test]
    fn api_reference_is_accepted_free_form() {
        let (res, _) = run("gemini/gemini-1.5-pro\n", |c| prompt_model_selection(&[], c));
        assert_eq!(res.unwrap()[0].source_kind, SourceKind::ApiProvider);
    }

    #[test]
    fn done_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let (res, _) = run("done\n", |c| prompt_visualization(&RunResult::default(), dir.path(), c));
        assert!(res.unwrap().is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn invalid_kind_reprompts() {
        let dir = tempfile::tempdir().unwrap();
        let (res, out) = run("pie\ndone\n", |c| prompt_visualization(&RunResult::default(), dir.path(), c));
        assert!(res.unwrap().is_empty());
        assert!(out.contains("unknown chart kind"));
    }
}
