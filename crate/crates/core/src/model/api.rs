//! Remote provider backends: wire adapters, auth, rate limiting, retries.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use thiserror::Error;

use super::rate_limit::RateLimiter;
use super::{
    approximate_tokens, Backend, BackendError, Capabilities, FinishReason, GenerationRequest, GenerationResult,
    ModelDescriptor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provider {
    OpenAi,
    Gemini,
    Anthropic,
}

impl Provider {
    pub const ALL: [Provider; 3] = [Provider::OpenAi, Provider::Gemini, Provider::Anthropic];

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "openai" => Some(Self::OpenAi),
            "gemini" | "google" => Some(Self::Gemini),
            "anthropic" | "claude" => Some(Self::Anthropic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::OpenAi => "openai",
            Self::Gemini => "gemini",
            Self::Anthropic => "anthropic",
        }
    }

    pub fn credential_var(self) -> &'static str {
        match self {
            Self::OpenAi => "OPENAI_API_KEY",
            Self::Gemini => "GEMINI_API_KEY",
            Self::Anthropic => "ANTHROPIC_API_KEY",
        }
    }

    fn endpoint(self, model: &str) -> String {
        match self {
            Self::OpenAi => "https://api.openai.com/v1/chat/completions".to_owned(),
            Self::Gemini => {
                format!("https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent")
            }
            Self::Anthropic => "https://api.anthropic.com/v1/messages".to_owned(),
        }
    }

    fn auth_headers(self, credential: &str) -> Vec<(String, String)> {
        match self {
            Self::OpenAi => vec![("Authorization".into(), format!("Bearer {credential}"))],
            Self::Gemini => vec![("x-goog-api-key".into(), credential.to_owned())],
            Self::Anthropic => vec![
                ("x-api-key".into(), credential.to_owned()),
                ("anthropic-version".into(), "2023-06-01".into()),
            ],
        }
    }

    fn body(self, model: &str, request: &GenerationRequest, descriptor: &ModelDescriptor) -> Value {
        let mut stop = descriptor.stop_sequences.clone();
        stop.extend(request.stop_sequences.iter().cloned());
        match self {
            Self::OpenAi => {
                let mut body = json!({
                    "model": model,
                    "messages": [{"role": "user", "content": request.prompt}],
                    "max_tokens": request.max_new_tokens,
                    "temperature": request.temperature,
                    "top_p": descriptor.top_p,
                });
                if !stop.is_empty() {
                    body["stop"] = json!(stop);
                }
                body
            }
            Self::Gemini => json!({
                "contents": [{"role": "user", "parts": [{"text": request.prompt}]}],
                "generationConfig": {
                    "maxOutputTokens": request.max_new_tokens,
                    "temperature": request.temperature,
                    "topP": descriptor.top_p,
                    "stopSequences": stop,
                },
            }),
            Self::Anthropic => {
                let mut body = json!({
                    "model": model,
                    "max_tokens": request.max_new_tokens,
                    "messages": [{"role": "user", "content": request.prompt}],
                    "temperature": request.temperature,
                });
                if !stop.is_empty() {
                    body["stop_sequences"] = json!(stop);
                }
                body
            }
        }
    }

    fn parse(self, body: &str) -> Result<Completion, String> {
        let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid response JSON: {e}"))?;
        let count = |p: &str| v.pointer(p).and_then(Value::as_u64).map(|n| n as usize);
        let completion = match self {
            Self::OpenAi => {
                let choice = v.pointer("/choices/0").ok_or("response has no choices")?;
                Completion {
                    text: choice.pointer("/message/content").and_then(Value::as_str).unwrap_or("").to_owned(),
                    length_limited: choice.get("finish_reason").and_then(Value::as_str) == Some("length"),
                    prompt_tokens: count("/usage/prompt_tokens"),
                    completion_tokens: count("/usage/completion_tokens"),
                }
            }
            Self::Gemini => {
                let candidate = v.pointer("/candidates/0").ok_or("response has no candidates")?;
                let text = candidate
                    .pointer("/content/parts")
                    .and_then(Value::as_array)
                    .map(|parts| parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect())
                    .unwrap_or_default();
                Completion {
                    text,
                    length_limited: candidate.get("finishReason").and_then(Value::as_str) == Some("MAX_TOKENS"),
                    prompt_tokens: count("/usageMetadata/promptTokenCount"),
                    completion_tokens: count("/usageMetadata/candidatesTokenCount"),
                }
            }
            Self::Anthropic => {
                let text = v
                    .get("content")
                    .and_then(Value::as_array)
                    .map(|blocks| {
                        blocks
                            .iter()
                            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                            .filter_map(|b| b.get("text").and_then(Value::as_str))
                            .collect()
                    })
                    .unwrap_or_default();
                Completion {
                    text,
                    length_limited: v.get("stop_reason").and_then(Value::as_str) == Some("max_tokens"),
                    prompt_tokens: count("/usage/input_tokens"),
                    completion_tokens: count("/usage/output_tokens"),
                }
            }
        };
        Ok(completion)
    }
}

struct Completion {
    text: String,
    length_limited: bool,
    prompt_tokens: Option<usize>,
    completion_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one POST request. Errors are connection-level failures; HTTP
/// error statuses come back as responses.
pub trait HttpTransport: Send {
    fn post(&mut self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("HTTP client builds");
        Self { client }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport for ReqwestTransport {
    fn post(&mut self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let body = serde_json::to_vec(&request.body).map_err(|e| e.to_string())?;
        let mut builder = self.client.post(&request.url).body(body);
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1), factor: 2.0, max_delay: Duration::from_secs(60) }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered delay before retry number `retry`
    /// (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let secs = self.base_delay.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_delay.as_secs_f64()))
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ApiError {
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("unreadable provider response: {0}")]
    Protocol(String),
}

fn is_retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// One authenticated provider endpoint with its own limiter.
pub struct ApiClient {
    provider: Provider,
    model: String,
    credential: String,
    transport: Box<dyn HttpTransport>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    rng: StdRng,
    retries_performed: u32,
}

impl ApiClient {
    pub fn new(
        provider: Provider,
        model: impl Into<String>,
        credential: String,
        transport: Box<dyn HttpTransport>,
        limiter: RateLimiter,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            provider,
            model: model.into(),
            credential,
            transport,
            limiter,
            retry,
            rng: StdRng::from_entropy(),
            retries_performed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = StdRng::seed_from_u64(seed);
        self
    }

    pub fn provider(&self) -> Provider {
        self.provider
    }

    /// Retries performed over the client's lifetime.
    pub fn retries_performed(&self) -> u32 {
        self.retries_performed
    }

    pub fn build_request(&self, request: &GenerationRequest, descriptor: &ModelDescriptor) -> HttpRequest {
        let mut headers = vec![("content-type".to_owned(), "application/json".to_owned())];
        headers.extend(self.provider.auth_headers(&self.credential));
        HttpRequest {
            url: self.provider.endpoint(&self.model),
            headers,
            body: self.provider.body(&self.model, request, descriptor),
        }
    }

    /// Sends `http` under the rate limit, retrying transient failures with
    /// capped exponential backoff and full jitter. Every attempt, retries
    /// included, takes a rate-limit token.
    pub fn api_request_with_policy(&mut self, http: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let mut retry = 0;
        loop {
            self.limiter.acquire();
            let last = match self.transport.post(http) {
                Ok(response) if (200..300).contains(&response.status) => return Ok(response),
                Ok(response) if !is_retryable(response.status) => {
                    return Err(ApiError::Rejected { status: response.status, body: response.body })
                }
                Ok(response) => format!("HTTP {}: {}", response.status, response.body),
                Err(transport) => transport,
            };
            if retry >= self.retry.max_retries {
                return Err(ApiError::RetriesExhausted { attempts: retry + 1, last });
            }
            let ceiling = self.retry.ceiling(retry);
            let delay = ceiling.mul_f64(self.rng.gen::<f64>());
            log::debug!("{} request failed ({last}); retrying in {delay:?}", self.provider.name());
            self.limiter.clock().sleep(delay);
            retry += 1;
            self.retries_performed += 1;
        }
    }
}

/// Sequential backend over an [`ApiClient`].
pub struct ApiBackend {
    client: ApiClient,
    descriptor: ModelDescriptor,
}

impl ApiBackend {
    pub fn new(client: ApiClient, descriptor: ModelDescriptor) -> Self {
        Self { client, descriptor }
    }

    pub fn client(&self) -> &ApiClient {
        &self.client
    }
}

impl Backend for ApiBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_batching: false, supports_logprobs: false }
    }

    fn generate_batch(&mut self, requests: &[GenerationRequest]) -> Result<Vec<GenerationResult>, BackendError> {
        let mut out = Vec::with_capacity(requests.len());
        for request in requests {
            let http = self.client.build_request(request, &self.descriptor);
            let started = Instant::now();
            let response = self.client.api_request_with_policy(&http)?;
            let completion = self.client.provider.parse(&response.body).map_err(ApiError::Protocol)?;
            let approximate = completion.prompt_tokens.is_none() || completion.completion_tokens.is_none();
            out.push(GenerationResult {
                request_id: request.request_id.clone(),
                prompt_tokens: completion.prompt_tokens.unwrap_or_else(|| approximate_tokens(&request.prompt)),
                completion_tokens: completion
                    .completion_tokens
                    .unwrap_or_else(|| approximate_tokens(&completion.text)),
                text: completion.text,
                latency_ms: started.elapsed().as_millis() as u64,
                finish_reason: if completion.length_limited { FinishReason::Length } else { FinishReason::Stop },
                error: None,
                tokens_approximate: approximate,
            });
        }
        Ok(out)
    }
}
