//! Scripted backend: fixed prompt → answer tables with failure injection.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    approximate_tokens, Backend, BackendError, Capabilities, FinishReason, GenerationRequest, GenerationResult,
    LocalLoader, ModelDescriptor, ModelError,
};

/// File that marks a directory as a mock checkpoint.
pub const MOCK_SCRIPT_FILE: &str = "mock_script.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockScript {
    /// Exact prompt → answer.
    pub answers: IndexMap<String, String>,
    /// Substring rules, tried in order after `answers`.
    pub rules: Vec<MockRule>,
    pub default_answer: String,
    /// Batches larger than this fail with resource exhaustion.
    pub exhaust_above_batch: Option<usize>,
    /// Any batch containing a prompt with one of these substrings fails
    /// with resource exhaustion, even alone.
    pub exhaust_at_batch_one: Vec<String>,
    /// The first batch containing a prompt with one of these substrings
    /// panics, simulating a crashed worker. Later batches succeed.
    pub crash_once_on: Vec<String>,
    pub supports_batching: bool,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            answers: IndexMap::new(),
            rules: Vec::new(),
            default_answer: String::new(),
            exhaust_above_batch: None,
            exhaust_at_batch_one: Vec::new(),
            crash_once_on: Vec::new(),
            supports_batching: true,
        }
    }
}

impl MockScript {
    pub fn answer(mut self, prompt: impl Into<String>, answer: impl Into<String>) -> Self {
        self.answers.insert(prompt.into(), answer.into());
        self
    }

    pub fn rule(mut self, contains: impl Into<String>, answer: impl Into<String>) -> Self {
        self.rules.push(MockRule { contains: contains.into(), answer: answer.into() });
        self
    }

    pub fn default_answer(mut self, answer: impl Into<String>) -> Self {
        self.default_answer = answer.into();
        self
    }

    pub fn exhaust_above(mut self, batch: usize) -> Self {
        self.exhaust_above_batch = Some(batch);
        self
    }

    pub fn lookup(&self, prompt: &str) -> &str {
        if let Some(answer) = self.answers.get(prompt) {
            return answer;
        }
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.contains))
            .map(|r| r.answer.as_str())
            .unwrap_or(&self.default_answer)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let load_err = |message: String| ModelError::Load { identifier: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    }

    /// Writes the script as `mock_script.json` inside `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MOCK_SCRIPT_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("script serializes"))?;
        Ok(path)
    }
}

/// One successful generation, as seen by the mock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCall {
    pub request_id: String,
    pub prompt: String,
}

/// Counters shared by every backend opened from the same checkpoint.
#[derive(Debug, Default)]
pub struct MockState {
    calls: Mutex<Vec<MockCall>>,
    batch_attempts: Mutex<Vec<usize>>,
    crashed: Mutex<HashSet<String>>,
}

impl MockState {
    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    /// Sizes of every batch submitted, including rejected ones.
    pub fn batch_attempts(&self) -> Vec<usize> {
        self.batch_attempts.lock().unwrap().clone()
    }

    pub fn reset(&self) {
        self.calls.lock().unwrap().clear();
        self.batch_attempts.lock().unwrap().clear();
        self.crashed.lock().unwrap().clear();
    }
}

pub struct MockBackend {
    script: Arc<MockScript>,
    state: Arc<MockState>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self::with_state(script, Arc::default())
    }

    pub fn with_state(script: MockScript, state: Arc<MockState>) -> Self {
        Self { script: Arc::new(script), state }
    }

    pub fn state(&self) -> Arc<MockState> {
        self.state.clone()
    }

    fn respond(&self, request: &GenerationRequest) -> GenerationResult {
        let mut text = self.script.lookup(&request.prompt).to_owned();
        let mut finish_reason = FinishReason::Stop;
        if let Some(cut) = request.stop_sequences.iter().filter_map(|s| text.find(s.as_str())).min() {
            text.truncate(cut);
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > request.max_new_tokens {
            text = words[..request.max_new_tokens].join(" ");
            finish_reason = FinishReason::Length;
        }
        GenerationResult {
            request_id: request.request_id.clone(),
            prompt_tokens: approximate_tokens(&request.prompt),
            completion_tokens: approximate_tokens(&text),
            text,
            latency_ms: 0,
            finish_reason,
            error: None,
            tokens_approximate: true,
        }
    }
}

impl Backend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_batching: self.script.supports_batching, supports_logprobs: false }
    }

    fn generate_batch(&mut self, requests: &[GenerationRequest]) -> Result<Vec<GenerationResult>, BackendError> {
        self.state.batch_attempts.lock().unwrap().push(requests.len());
        if let Some(limit) = self.script.exhaust_above_batch {
            if requests.len() > limit {
                return Err(BackendError::ResourceExhausted {
                    batch_size: requests.len(),
                    message: format!("scripted limit of {limit}"),
                });
            }
        }
        if requests
            .iter()
            .any(|r| self.script.exhaust_at_batch_one.iter().any(|s| r.prompt.contains(s.as_str())))
        {
            return Err(BackendError::ResourceExhausted {
                batch_size: requests.len(),
                message: "scripted exhaustion".into(),
            });
        }
        for request in requests {
            for trigger in &self.script.crash_once_on {
                if request.prompt.contains(trigger.as_str()) && self.state.crashed.lock().unwrap().insert(trigger.clone())
                {
                    panic!("scripted crash on {trigger:?}");
                }
            }
        }
        let results: Vec<GenerationResult> = requests.iter().map(|r| self.respond(r)).collect();
        self.state.calls.lock().unwrap().extend(
            requests.iter().map(|r| MockCall { request_id: r.request_id.clone(), prompt: r.prompt.clone() }),
        );
        Ok(results)
    }
}

/// Opens directories containing `mock_script.json`. Backends opened from
/// the same directory share one [`MockState`].
#[derive(Default)]
pub struct MockLoader {
    states: Mutex<HashMap<PathBuf, Arc<MockState>>>,
}

impl MockLoader {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(dir: &Path) -> PathBuf {
        dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf())
    }

    /// Shared counters for the checkpoint at `dir`.
    pub fn state(&self, dir: &Path) -> Arc<MockState> {
        self.states.lock().unwrap().entry(Self::key(dir)).or_default().clone()
    }
}

impl LocalLoader for MockLoader {
    fn name(&self) -> &str {
        "mock"
    }

    fn accepts(&self, dir: &Path) -> bool {
        dir.join(MOCK_SCRIPT_FILE).is_file()
    }

    fn load(&self, descriptor: &ModelDescriptor) -> Result<Box<dyn Backend>, ModelError> {
        let dir = Path::new(&descriptor.identifier);
        let script = MockScript::load(&dir.join(MOCK_SCRIPT_FILE))?;
        Ok(Box::new(MockBackend::with_state(script, self.state(dir))))
    }
}
