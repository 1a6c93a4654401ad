//! Temporary datasets, mock checkpoints and services for end-to-end tests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalkit_core::config::{from_value, SuiteConfig};
use evalkit_core::model::mock::MockState;
use evalkit_core::model::{BackendRegistry, MockLoader, MockScript, ModelDescriptor};
use evalkit_core::pipeline::{RunOptions, Services};
use evalkit_core::prompts::PromptStore;
use evalkit_core::registry::{DatasetLoader, EvaluatorRegistry};
use serde_json::{json, Value};

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Two-choice records shaped like PIQA; gold alternates 0, 1, 0, ...
pub fn piqa_rows(n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| json!({"id": format!("p{i:02}"), "goal": format!("goal {i}"), "sol1": format!("first {i}"), "sol2": format!("second {i}"), "label": i % 2}))
        .collect()
}

pub fn piqa_gold(i: usize) -> &'static str {
    if i % 2 == 0 {
        "0"
    } else {
        "1"
    }
}

/// Script answering record `i` correctly iff `correct(i)`.
pub fn piqa_script(n: usize, correct: impl Fn(usize) -> bool) -> MockScript {
    let mut script = MockScript::default().default_answer("no idea");
    for i in 0..n {
        let gold = piqa_gold(i);
        let answer = if correct(i) { gold } else if gold == "0" { "1" } else { "0" };
        script = script.rule(format!("Question: goal {i}\n"), answer);
    }
    script
}

/// Four-choice records with a language column, eleven languages.
pub const INDIC: [&str; 11] = ["bn", "en", "gu", "hi", "kn", "ml", "mr", "or", "pa", "ta", "te"];

pub fn arc_rows(per_language: usize) -> Vec<Value> {
    let mut rows = Vec::new();
    for lang in INDIC {
        for i in 0..per_language {
            let key = ["A", "B", "C", "D"][i % 4];
            rows.push(json!({
                "id": format!("{lang}-{i}"),
                "question": format!("question {lang} {i}"),
                "choices": {"text": ["w", "x", "y", "z"], "label": ["A", "B", "C", "D"]},
                "answerKey": key,
                "language": lang,
            }));
        }
    }
    rows
}

/// Correct on even `i`, otherwise a wrong label.
pub fn arc_script(per_language: usize) -> MockScript {
    let mut script = MockScript::default().default_answer("?");
    for lang in INDIC {
        for i in 0..per_language {
            let key = i % 4;
            let answer = if i % 2 == 0 { key } else { (key + 1) % 4 };
            script = script.rule(format!("question {lang} {i}\n"), format!("The answer is {}", ["A", "B", "C", "D"][answer]));
        }
    }
    script
}

/// The shipped suite cut down to `names`, keeping group structure.
pub fn suite_subset(names: &[&str]) -> SuiteConfig {
    let full: Value = serde_json::from_str(evalkit_core::registry::builtin::SUITE_JSON).unwrap();
    let mut specs = serde_json::Map::new();
    for n in names {
        specs.insert((*n).to_owned(), full["specs"][*n].clone());
    }
    let mut groups = serde_json::Map::new();
    for (group, members) in full["groups"].as_object().unwrap() {
        let kept: Vec<Value> = members.as_array().unwrap().iter().filter(|m| names.contains(&m.as_str().unwrap())).cloned().collect();
        if !kept.is_empty() {
            groups.insert(group.clone(), Value::Array(kept));
        }
    }
    let mut doc = json!({"groups": groups, "specs": specs});
    if let Some(defaults) = full.get("defaults") {
        doc["defaults"] = defaults.clone();
    }
    from_value(doc).unwrap()
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub loader: Arc<MockLoader>,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap(), loader: Arc::new(MockLoader::new()) }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn data_root(&self) -> PathBuf {
        self.path("data")
    }

    pub fn add_dataset(&self, dataset: &str, split: &str, rows: &[Value]) {
        write_jsonl(&self.data_root().join(dataset).join(format!("{split}.jsonl")), rows);
    }

    pub fn add_model(&self, name: &str, script: &MockScript) -> ModelDescriptor {
        let dir = self.path(&format!("models/{name}"));
        std::fs::create_dir_all(&dir).unwrap();
        script.write_to(&dir).unwrap();
        ModelDescriptor::local(dir.to_string_lossy())
    }

    pub fn state(&self, model: &ModelDescriptor) -> Arc<MockState> {
        self.loader.state(Path::new(&model.identifier))
    }

    pub fn services_with_prompts(&self, prompts: PromptStore) -> Services {
        let mut factory = BackendRegistry::new();
        factory.register_loader(self.loader.clone());
        Services {
            factory: Arc::new(factory),
            datasets: Arc::new(DatasetLoader::with_mirror(self.data_root())),
            prompts,
            evaluators: EvaluatorRegistry::with_builtins(),
        }
    }

    pub fn services(&self) -> Services {
        self.services_with_prompts(PromptStore::embedded())
    }

    pub fn options(&self, models: Vec<ModelDescriptor>, workers: usize) -> RunOptions {
        RunOptions { models, workers, ..RunOptions::default() }
    }
}
