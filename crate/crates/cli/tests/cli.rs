use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evalkit_cli::{main_with, EXIT_OK, EXIT_RUN_FAILED, EXIT_USAGE};
use evalkit_core::model::MockScript;
use serde_json::{json, Value};

const RECORDS: usize = 10;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// A two-benchmark config, a data mirror holding only the PIQA split and
    /// a mock checkpoint answering 9 of 10 PIQA records correctly.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let rows: String = (0..RECORDS)
            .map(|i| {
                json!({"id": format!("p{i}"), "goal": format!("goal {i}"), "sol1": "one", "sol2": "two", "label": i % 2})
                    .to_string()
                    + "\n"
            })
            .collect();
        let split = root.join("data/ybisk/piqa/validation.jsonl");
        std::fs::create_dir_all(split.parent().unwrap()).unwrap();
        std::fs::write(&split, rows).unwrap();

        let mut script = MockScript::default().default_answer("unsure");
        for i in 0..RECORDS {
            let gold = i % 2;
            let answer = if i == 0 { 1 - gold } else { gold };
            script = script.rule(format!("Question: goal {i}\n"), answer.to_string());
        }
        let model = root.join("models/tiny");
        std::fs::create_dir_all(&model).unwrap();
        script.write_to(&model).unwrap();

        let piqa = json!({
            "evaluation_function": "core.multiple_choice.evaluate",
            "task_args": {
                "dataset_name": "ybisk/piqa",
                "dataset_split": "validation",
                "num_few_shot": 0,
                "max_new_tokens": 5,
                "generation_batch_size": 4,
                "prompt_template_name_zeroshot": "piqa_generation",
                "prompt_template_name_fewshot": "piqa_5shot_generation",
                "prompt_file_benchmark_key": "piqa",
                "prompt_file_category": "commonsense",
                "gold_field": "label",
                "extraction": {"valid_labels": ["0", "1"]}
            }
        });
        let mut missing = piqa.clone();
        missing["task_args"]["dataset_name"] = json!("nobody/absent");
        let config = json!({
            "groups": {"Commonsense Reasoning": ["PIQA"], "Broken": ["Absent"]},
            "specs": {"PIQA": piqa, "Absent": missing}
        });
        std::fs::write(root.join("suite.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn common_args(&self, out: &str) -> Vec<String> {
        vec![
            "--config".into(),
            self.path("suite.json").display().to_string(),
            "--data-root".into(),
            self.path("data").display().to_string(),
            "--output-dir".into(),
            self.path(out).display().to_string(),
            "--no-cache".into(),
        ]
    }

    fn run_args(&self, out: &str, tasks: &str) -> Vec<String> {
        let mut args = vec!["run".into(), "--model".into(), self.path("models/tiny").display().to_string()];
        args.extend(self.common_args(out));
        args.extend(["--tasks".into(), tasks.into()]);
        args
    }
}

fn evalkit(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evalkit")).args(args).output().unwrap()
}

fn without_timestamps(path: &Path) -> Value {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["metadata"].as_object_mut().unwrap().remove("timestamps");
    doc
}

#[test]
fn scripted_run_exports_results() {
    let fx = Fixture::new();
    let output = evalkit(&fx.run_args("out", "PIQA"));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(output.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(stdout.contains("90.00"), "{stdout}");
    let csv = std::fs::read_to_string(fx.path("out/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,task,language,metric,score,support");
    assert!(lines[1].ends_with(",PIQA,,accuracy,90.00,10"), "{}", lines[1]);
    assert!(lines.last().unwrap().contains(",AVERAGE,,primary,90.00,1"));
    assert!(fx.path("out/results.json").is_file());
}

#[test]
fn usage_errors_exit_two() {
    let fx = Fixture::new();
    let no_config = evalkit(&["run".into(), "--model".into(), fx.path("models/tiny").display().to_string()]);
    assert_eq!(no_config.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&no_config.stderr).contains("--config"));

    let unknown_task = evalkit(&fx.run_args("out", "NoSuchTask"));
    assert_eq!(unknown_task.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&unknown_task.stderr).contains("NoSuchTask"));

    let mut missing_model = fx.run_args("out", "PIQA");
    missing_model[2] = fx.path("models/none").display().to_string();
    assert_eq!(evalkit(&missing_model).status.code(), Some(EXIT_USAGE));

    let mut zero_workers = fx.run_args("out", "PIQA");
    zero_workers.extend(["--workers".into(), "0".into()]);
    assert_eq!(evalkit(&zero_workers).status.code(), Some(EXIT_USAGE));

    std::fs::write(fx.path("bad.json"), "{\"groups\": {}, \"specs\": {").unwrap();
    let mut bad_config = fx.run_args("out", "PIQA");
    bad_config[4] = fx.path("bad.json").display().to_string();
    let output = evalkit(&bad_config);
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    assert!(!fx.path("out").exists());
}

#[test]
fn unit_failure_exits_one_with_partial_export() {
    let fx = Fixture::new();
    let output = evalkit(&fx.run_args("partial", "PIQA,Absent"));
    assert_eq!(output.status.code(), Some(EXIT_RUN_FAILED));
    assert!(String::from_utf8_lossy(&output.stderr).contains("failed: Absent"));
    let exported = without_timestamps(&fx.path("partial/results.json"));
    assert_eq!(exported["metadata"]["failed_units"].as_array().unwrap().len(), 1);
    assert_eq!(exported["rows"].as_array().unwrap().len(), 1);
}

fn interactive(fx: &Fixture, out: &str, script: &str) -> (i32, String, String) {
    let mut args: Vec<String> = vec!["evalkit".into(), "interactive".into()];
    args.extend(["--model-root".into(), fx.path("models").display().to_string()]);
    args.extend(fx.common_args(out));
    let mut input = Cursor::new(script.as_bytes().to_vec());
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let code = main_with(args, &mut input, &mut stdout, &mut stderr);
    (code, String::from_utf8(stdout).unwrap(), String::from_utf8(stderr).unwrap())
}

#[test]
fn interactive_session_matches_scripted_run() {
    let fx = Fixture::new();
    assert_eq!(evalkit(&fx.run_args("scripted", "PIQA")).status.code(), Some(EXIT_OK));
    // Model 1, group 1 (Commonsense Reasoning), all subtasks, then a bar chart.
    let (code, stdout, stderr) = interactive(&fx, "wizard", "1\n1\nall\nbar\n1\nall\ndone\n");
    assert_eq!(code, EXIT_OK, "{stdout}\n{stderr}");
    assert!(stdout.contains("90.00"));
    let mut scripted = without_timestamps(&fx.path("scripted/results.json"));
    let mut wizard = without_timestamps(&fx.path("wizard/results.json"));
    for doc in [&mut scripted, &mut wizard] {
        doc["metadata"]["system"].as_object_mut().unwrap().remove("cache_dir");
    }
    assert_eq!(scripted, wizard);
    let charts: Vec<_> = std::fs::read_dir(fx.path("wizard/charts")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(charts.len(), 2, "{charts:?}");
}

#[test]
fn three_invalid_entries_abort() {
    let fx = Fixture::new();
    let (code, stdout, stderr) = interactive(&fx, "w", "7\n/no/such/dir\nnope\n");
    assert_eq!(code, EXIT_USAGE, "{stdout}\n{stderr}");
    assert!(!fx.path("w/results.json").exists());
}

#[test]
fn closed_input_aborts() {
    let fx = Fixture::new();
    let (code, _, stderr) = interactive(&fx, "w", "1\n");
    assert_eq!(code, EXIT_USAGE);
    assert!(!stderr.is_empty());
}

#[test]
fn list_and_compare() {
    let fx = Fixture::new();
    let output = evalkit(&["list".into(), "--config".into(), fx.path("suite.json").display().to_string()]);
    assert_eq!(output.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("Commonsense Reasoning\n  PIQA\n"), "{stdout}");

    assert_eq!(evalkit(&fx.run_args("a", "PIQA")).status.code(), Some(EXIT_OK));
    assert_eq!(evalkit(&fx.run_args("b", "PIQA")).status.code(), Some(EXIT_OK));
    let output = evalkit(&[
        "compare".into(),
        fx.path("a/results.json").display().to_string(),
        fx.path("b/results.json").display().to_string(),
    ]);
    assert_eq!(output.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stdout).contains("PIQA"));

    let single = evalkit(&["compare".into(), fx.path("a/results.json").display().to_string()]);
    assert_eq!(single.status.code(), Some(EXIT_USAGE));
}
