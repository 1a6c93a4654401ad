//! Backend-agnostic text generation.
//!
//! A [`BackendHandle`] owns one live backend. Local checkpoints are opened
//! by registered [`LocalLoader`]s; remote providers go through
//! [`api::ApiBackend`]. The scripted [`mock::MockBackend`] makes the whole
//! stack deterministic for tests.

pub mod api;
pub mod discovery;
pub mod mock;
pub mod rate_limit;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::{ApiBackend, ApiClient, ApiError, HttpRequest, HttpResponse, HttpTransport, Provider, RetryPolicy};
pub use discovery::{discover_models, discover_models_with, Discovery, ProviderCatalog, WEIGHT_MANIFESTS};
pub use mock::{MockBackend, MockLoader, MockRule, MockScript, MOCK_SCRIPT_FILE};
pub use rate_limit::{Clock, FakeClock, RateLimiter, SystemClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalPath,
    ApiProvider,
}

/// Weight format requested from the local loader. Only passed through;
/// kernels are the loader's business.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    #[default]
    None,
    Int8,
    Int4,
}

impl std::str::FromStr for Quantization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "int8" | "8bit" => Ok(Self::Int8),
            "int4" | "4bit" => Ok(Self::Int4),
            other => Err(format!("unknown quantization {other:?} (expected none, int8 or int4)")),
        }
    }
}

impl Quantization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Int8 => "int8",
            Self::Int4 => "int4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub source_kind: SourceKind,
    /// Checkpoint directory, or `provider/model` for API models.
    pub identifier: String,
    #[serde(default)]
    pub quantization: Quantization,
    #[serde(default = "default_context")]
    pub max_context_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

fn default_context() -> usize {
    4096
}

fn default_top_p() -> f64 {
    1.0
}

impl ModelDescriptor {
    pub fn local(path: impl Into<String>) -> Self {
        Self::new(SourceKind::LocalPath, path)
    }

    pub fn api(provider_model: impl Into<String>) -> Self {
        Self::new(SourceKind::ApiProvider, provider_model)
    }

    fn new(source_kind: SourceKind, identifier: impl Into<String>) -> Self {
        Self {
            source_kind,
            identifier: identifier.into(),
            quantization: Quantization::None,
            max_context_tokens: default_context(),
            temperature: 0.0,
            top_p: default_top_p(),
            stop_sequences: Vec::new(),
        }
    }

    /// Name used in result tables: the identifier, suffixed with the
    /// quantization when one is requested.
    pub fn label(&self) -> String {
        match self.quantization {
            Quantization::None => self.identifier.clone(),
            q => format!("{}:{}", self.identifier, q.as_str()),
        }
    }

    pub fn with_quantization(mut self, quantization: Quantization) -> Self {
        self.quantization = quantization;
        self
    }

    pub fn with_max_context(mut self, tokens: usize) -> Self {
        self.max_context_tokens = tokens;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.identifier.trim().is_empty() {
            return Err(ModelError::InvalidDescriptor("identifier must not be empty".into()));
        }
        if self.max_context_tokens < 1 {
            return Err(ModelError::InvalidDescriptor("max_context_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ModelError::InvalidDescriptor("temperature must be non-negative".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidDescriptor("top_p must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Parses a command-line model reference: `provider/model` for a known
    /// provider, anything else is a local path.
    pub fn parse_reference(reference: &str) -> Self {
        match reference.split_once('/') {
            Some((provider, model)) if !model.is_empty() && Provider::from_name(provider).is_some() => {
                Self::api(reference)
            }
            _ => Self::local(reference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub request_id: String,
    pub prompt: String,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(request_id: impl Into<String>, prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        Self {
            request_id: request_id.into(),
            prompt: prompt.into(),
            max_new_tokens,
            stop_sequences: Vec::new(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub request_id: String,
    /// The continuation only; the prompt is never echoed.
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub latency_ms: u64,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Token counts are whitespace approximations rather than tokenizer
    /// or provider counts.
    #[serde(default)]
    pub tokens_approximate: bool,
}

impl GenerationResult {
    pub fn failed(request_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            text: String::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_ms: 0,
            finish_reason: FinishReason::Error,
            error: Some(error.into()),
            tokens_approximate: true,
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_batching: bool,
    pub supports_logprobs: bool,
}

/// What to do with prompts longer than the model context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongContextPolicy {
    #[default]
    Error,
    TruncateLeft,
}

impl std::str::FromStr for LongContextPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(Self::Error),
            "truncate_left" | "truncate-left" => Ok(Self::TruncateLeft),
            other => Err(format!("unknown long-context policy {other:?} (expected error or truncate_left)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// The batch did not fit; retrying with a smaller batch may succeed.
    #[error("resource exhausted at batch size {batch_size}: {message}")]
    ResourceExhausted { batch_size: usize, message: String },
    #[error("backend handle has been released")]
    Released,
    #[error("empty request batch")]
    EmptyBatch,
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("backend failure: {0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown API provider {0:?}")]
    UnknownProvider(String),
    #[error("missing credentials: set the {var} environment variable")]
    MissingCredential { var: &'static str },
    #[error("model path not found: {0}")]
    PathNotFound(String),
    #[error("no registered loader understands the checkpoint at {0}")]
    NoLoader(String),
    #[error("failed to load model {identifier}: {message}")]
    Load { identifier: String, message: String },
}

/// Whitespace token count used when a backend has no tokenizer.
pub fn approximate_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the last `max_tokens` whitespace tokens, preserving the original
/// spacing between them.
pub fn truncate_left_whitespace(text: &str, max_tokens: usize) -> String {
    let starts: Vec<usize> = text
        .char_indices()
        .filter(|&(i, c)| !c.is_whitespace() && (i == 0 || text[..i].ends_with(char::is_whitespace)))
        .map(|(i, _)| i)
        .collect();
    if starts.len() <= max_tokens {
        return text.to_owned();
    }
    if max_tokens == 0 {
        return String::new();
    }
    text[starts[starts.len() - max_tokens]..].to_owned()
}

/// A generation engine behind a [`BackendHandle`].
pub trait Backend: Send {
    fn capabilities(&self) -> Capabilities;

    /// One result per request, in request order.
    fn generate_batch(&mut self, requests: &[GenerationRequest]) -> Result<Vec<GenerationResult>, BackendError>;

    fn count_tokens(&self, text: &str) -> usize {
        approximate_tokens(text)
    }

    fn truncate_left(&self, text: &str, max_tokens: usize) -> String {
        truncate_left_whitespace(text, max_tokens)
    }

    /// Frees backend resources. Called at most once.
    fn release(&mut self) {}
}

/// Opens local checkpoints of one on-disk convention.
pub trait LocalLoader: Send + Sync {
    fn name(&self) -> &str;
    fn accepts(&self, dir: &Path) -> bool;
    fn load(&self, descriptor: &ModelDescriptor) -> Result<Box<dyn Backend>, ModelError>;
}

/// A live backend bound to its descriptor.
pub struct BackendHandle {
    descriptor: ModelDescriptor,
    capabilities: Capabilities,
    long_context: LongContextPolicy,
    backend: Option<Box<dyn Backend>>,
}

impl std::fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendHandle")
            .field("descriptor", &self.descriptor)
            .field("capabilities", &self.capabilities)
            .field("released", &self.is_released())
            .finish()
    }
}

impl BackendHandle {
    pub fn new(descriptor: ModelDescriptor, backend: Box<dyn Backend>) -> Self {
        let capabilities = backend.capabilities();
        Self { descriptor, capabilities, long_context: LongContextPolicy::Error, backend: Some(backend) }
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    pub fn set_long_context_policy(&mut self, policy: LongContextPolicy) {
        self.long_context = policy;
    }

    pub fn long_context_policy(&self) -> LongContextPolicy {
        self.long_context
    }

    pub fn is_released(&self) -> bool {
        self.backend.is_none()
    }

    /// Generates for every request, in order. Invalid or over-long prompts
    /// fail individually without affecting the rest of the batch.
    pub fn generate_batch(&mut self, requests: &[GenerationRequest]) -> Result<Vec<GenerationResult>, BackendError> {
        let max_context = self.descriptor.max_context_tokens;
        let policy = self.long_context;
        let backend = self.backend.as_mut().ok_or(BackendError::Released)?;
        if requests.is_empty() {
            return Err(BackendError::EmptyBatch);
        }

        let mut slots: Vec<Option<GenerationResult>> = vec![None; requests.len()];
        let mut pending: Vec<(usize, GenerationRequest)> = Vec::with_capacity(requests.len());
        for (i, request) in requests.iter().enumerate() {
            if request.prompt.is_empty() {
                slots[i] = Some(GenerationResult::failed(&request.request_id, "empty prompt"));
                continue;
            }
            if request.max_new_tokens < 1 {
                slots[i] = Some(GenerationResult::failed(&request.request_id, "max_new_tokens must be at least 1"));
                continue;
            }
            let tokens = backend.count_tokens(&request.prompt);
            if tokens > max_context {
                match policy {
                    LongContextPolicy::Error => {
                        slots[i] = Some(GenerationResult::failed(
                            &request.request_id,
                            format!("prompt has {tokens} tokens, context limit is {max_context}"),
                        ));
                        continue;
                    }
                    LongContextPolicy::TruncateLeft => {
                        let mut truncated = request.clone();
                        truncated.prompt = backend.truncate_left(&request.prompt, max_context);
                        pending.push((i, truncated));
                        continue;
                    }
                }
            }
            pending.push((i, request.clone()));
        }

        if !pending.is_empty() {
            let batch: Vec<GenerationRequest> = pending.iter().map(|(_, r)| r.clone()).collect();
            let results = if self.capabilities.supports_batching {
                backend.generate_batch(&batch)?
            } else {
                let mut out = Vec::with_capacity(batch.len());
                for request in &batch {
                    out.extend(backend.generate_batch(std::slice::from_ref(request))?);
                }
                out
            };
            if results.len() != batch.len() {
                return Err(BackendError::Other(format!(
                    "backend returned {} results for {} requests",
                    results.len(),
                    batch.len()
                )));
            }
            for ((i, _), result) in pending.into_iter().zip(results) {
                slots[i] = Some(result);
            }
        }
        Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
    }

    /// Frees the backend. Releasing twice is a no-op.
    pub fn release(&mut self) {
        if let Some(mut backend) = self.backend.take() {
            backend.release();
        }
    }
}

impl Drop for BackendHandle {
    fn drop(&mut self) {
        self.release();
    }
}

/// Creates backend handles from descriptors.
pub trait BackendFactory: Send + Sync {
    fn create_backend(&self, descriptor: &ModelDescriptor) -> Result<BackendHandle, ModelError>;
}

type EnvLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;
type TransportFactory = Arc<dyn Fn(Provider) -> Box<dyn HttpTransport> + Send + Sync>;

/// Default factory: registered local loaders plus the built-in API
/// providers.
#[derive(Clone)]
pub struct BackendRegistry {
    loaders: Vec<Arc<dyn LocalLoader>>,
    env: EnvLookup,
    transport: TransportFactory,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    requests_per_minute: u32,
    /// One bucket per provider, shared by every backend this factory opens.
    limiters: Arc<Mutex<HashMap<Provider, RateLimiter>>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self {
            loaders: Vec::new(),
            env: Arc::new(|var| std::env::var(var).ok().filter(|v| !v.is_empty())),
            transport: Arc::new(|_| Box::new(api::ReqwestTransport::new())),
            clock: Arc::new(SystemClock::new()),
            retry: RetryPolicy::default(),
            requests_per_minute: 60,
            limiters: Arc::default(),
        }
    }

    pub fn register_loader(&mut self, loader: Arc<dyn LocalLoader>) -> &mut Self {
        self.loaders.push(loader);
        self
    }

    pub fn with_env(mut self, env: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.env = Arc::new(env);
        self
    }

    pub fn with_transport(
        mut self,
        transport: impl Fn(Provider) -> Box<dyn HttpTransport> + Send + Sync + 'static,
    ) -> Self {
        self.transport = Arc::new(transport);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self.limiters = Arc::default();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.requests_per_minute = requests_per_minute;
        self.limiters = Arc::default();
        self
    }
}

impl BackendFactory for BackendRegistry {
    fn create_backend(&self, descriptor: &ModelDescriptor) -> Result<BackendHandle, ModelError> {
        descriptor.validate()?;
        match descriptor.source_kind {
            SourceKind::LocalPath => {
                let dir = Path::new(&descriptor.identifier);
                if !dir.exists() {
                    return Err(ModelError::PathNotFound(descriptor.identifier.clone()));
                }
                let loader = self
                    .loaders
                    .iter()
                    .find(|l| l.accepts(dir))
                    .ok_or_else(|| ModelError::NoLoader(descriptor.identifier.clone()))?;
                log::debug!("loading {} with {} loader", descriptor.identifier, loader.name());
                Ok(BackendHandle::new(descriptor.clone(), loader.load(descriptor)?))
            }
            SourceKind::ApiProvider => {
                let (provider_name, model) = descriptor
                    .identifier
                    .split_once('/')
                    .ok_or_else(|| ModelError::UnknownProvider(descriptor.identifier.clone()))?;
                let provider = Provider::from_name(provider_name)
                    .ok_or_else(|| ModelError::UnknownProvider(provider_name.to_owned()))?;
                let var = provider.credential_var();
                let credential = (self.env)(var).ok_or(ModelError::MissingCredential { var })?;
                let limiter = self
                    .limiters
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .entry(provider)
                    .or_insert_with(|| RateLimiter::new(self.requests_per_minute, self.clock.clone()))
                    .clone();
                let client = ApiClient::new(
                    provider,
                    model,
                    credential,
                    (self.transport)(provider),
                    limiter,
                    self.retry.clone(),
                );
                let backend = ApiBackend::new(client, descriptor.clone());
                Ok(BackendHandle::new(descriptor.clone(), Box::new(backend)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_handle(script: MockScript) -> BackendHandle {
        BackendHandle::new(ModelDescriptor::local("mock"), Box::new(MockBackend::new(script)))
    }

    #[test]
    fn results_follow_request_order() {
        let script = MockScript::default()
            .answer("p1", "one")
            .answer("p2", "two")
            .answer("p3", "three");
        let mut handle = mock_handle(script);
        let requests: Vec<_> = ["p3", "p1", "p2"]
            .iter()
            .enumerate()
            .map(|(i, p)| GenerationRequest::new(format!("r{i}"), *p, 8))
            .collect();
        let out = handle.generate_batch(&requests).unwrap();
        let texts: Vec<_> = out.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["three", "one", "two"]);
        assert_eq!(out[0].request_id, "r0");
        assert_eq!(out[0].finish_reason, FinishReason::Stop);
    }

    #[test]
    fn released_handle_rejects_generation() {
        let mut handle = mock_handle(MockScript::default());
        handle.release();
        handle.release();
        assert!(handle.is_released());
        let err = handle.generate_batch(&[GenerationRequest::new("r", "p", 1)]).unwrap_err();
        assert!(matches!(err, BackendError::Released));
    }

    #[test]
    fn over_long_prompt_fails_alone() {
        let script = MockScript::default().answer("short", "ok");
        let mut handle = BackendHandle::new(
            ModelDescriptor::local("mock").with_max_context(3),
            Box::new(MockBackend::new(script)),
        );
        let requests = [
            GenerationRequest::new("a", "short", 4),
            GenerationRequest::new("b", "one two three four five", 4),
            GenerationRequest::new("c", "short", 4),
        ];
        let out = handle.generate_batch(&requests).unwrap();
        assert_eq!(out[0].text, "ok");
        assert!(out[1].is_error());
        assert_eq!(out[2].text, "ok");
    }

    #[test]
    fn truncate_left_keeps_suffix() {
        let script = MockScript::default().answer("four five", "tail");
        let mut handle = BackendHandle::new(
            ModelDescriptor::local("mock").with_max_context(2),
            Box::new(MockBackend::new(script)),
        );
        handle.set_long_context_policy(LongContextPolicy::TruncateLeft);
        let out = handle.generate_batch(&[GenerationRequest::new("a", "one two three four five", 4)]).unwrap();
        assert_eq!(out[0].text, "tail");
        assert_eq!(truncate_left_whitespace("a  b\nc", 2), "b\nc");
        assert_eq!(truncate_left_whitespace("a b", 5), "a b");
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut handle = mock_handle(MockScript::default());
        assert!(matches!(handle.generate_batch(&[]), Err(BackendError::EmptyBatch)));
    }

    #[test]
    fn missing_credential_names_variable() {
        let registry = BackendRegistry::new().with_env(|_| None);
        let err = registry.create_backend(&ModelDescriptor::api("openai/gpt-x")).unwrap_err();
        match err {
            ModelError::MissingCredential { var } => assert_eq!(var, "OPENAI_API_KEY"),
            other => panic!("unexpected {other:?}"),
        }
        let err = registry.create_backend(&ModelDescriptor::api("nobody/model")).unwrap_err();
        assert!(matches!(err, ModelError::UnknownProvider(_)));
    }

    #[test]
    fn local_path_must_exist() {
        let registry = BackendRegistry::new();
        let err = registry.create_backend(&ModelDescriptor::local("/no/such/model")).unwrap_err();
        assert!(matches!(err, ModelError::PathNotFound(_)));
    }

    #[test]
    fn mock_loader_roundtrip_and_quantization_echo() {
        let dir = tempfile::tempdir().unwrap();
        MockScript::default().answer("P", "B").write_to(dir.path()).unwrap();
        let mut registry = BackendRegistry::new();
        registry.register_loader(Arc::new(MockLoader::new()));
        let desc = ModelDescriptor::local(dir.path().to_string_lossy()).with_quantization(Quantization::Int4);
        let mut handle = registry.create_backend(&desc).unwrap();
        assert_eq!(handle.descriptor().quantization, Quantization::Int4);
        let out = handle.generate_batch(&[GenerationRequest::new("r", "P", 4)]).unwrap();
        assert_eq!(out[0].text, "B");
        handle.release();
        let mut again = registry.create_backend(&desc).unwrap();
        assert!(!again.is_released());
        assert_eq!(again.generate_batch(&[GenerationRequest::new("r", "P", 4)]).unwrap()[0].text, "B");
    }

    #[test]
    fn unrecognised_checkpoint_has_no_loader() {
        let dir = tempfile::tempdir().unwrap();
        let registry = BackendRegistry::new();
        let err = registry.create_backend(&ModelDescriptor::local(dir.path().to_string_lossy())).unwrap_err();
        assert!(matches!(err, ModelError::NoLoader(_)));
    }

    #[test]
    fn parse_reference_distinguishes_providers() {
        assert_eq!(ModelDescriptor::parse_reference("openai/gpt-4o").source_kind, SourceKind::ApiProvider);
        assert_eq!(ModelDescriptor::parse_reference("./fixtures/mock-model").source_kind, SourceKind::LocalPath);
        assert_eq!(ModelDescriptor::parse_reference("/abs/path").source_kind, SourceKind::LocalPath);
    }
}
