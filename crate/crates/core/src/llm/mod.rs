//! Chat-completion and embedding client.
//!
//! [`LlmGateway`] sits in front of an [`LlmBackend`] (an OpenAI-compatible
//! HTTP endpoint or the deterministic [`StubBackend`]) and adds a
//! content-addressed response cache, retries with exponential backoff,
//! per-endpoint concurrency limits and JSON-schema enforcement with one
//! re-ask.

mod cache;
mod http;
mod stub;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use stub::{StubBackend, STUB_FINGERPRINT};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no model {0:?} in the registry")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    /// Retryable failure reported by a backend (connection refused, 5xx, 429).
    #[error("temporary backend failure: {0}")]
    Temporary(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("output does not match the schema: {message}")]
    Schema { message: String, raw: String },
    #[error("response cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<Value>,
}

impl ChatRequest {
    /// Temperature 0, the given seed, 512 tokens.
    pub fn new(model_id: &str, messages: Vec<Message>, seed: u64) -> Self {
        ChatRequest {
            model_id: model_id.to_string(),
            messages,
            temperature: 0.0,
            seed,
            max_tokens: 512,
            output_schema: None,
        }
    }

    pub fn with_schema(mut self, schema: Value) -> Self {
        self.output_schema = Some(schema);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        Ok(())
    }

    /// Cache key: SHA-256 over the canonical JSON of every field that can
    /// change the output.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::json!({
            "kind": "chat",
            "model_id": self.model_id,
            "messages": self.messages,
            "schema": self.output_schema,
            "temperature": self.temperature,
            "seed": self.seed,
            "max_tokens": self.max_tokens,
        });
        crate::util::sha256_hex(canonical.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend returns for one chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
    /// Served-model fingerprint, when the endpoint reports one.
    #[serde(default)]
    pub fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: Usage,
    pub cached: bool,
    pub fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    /// Base URL of an OpenAI-compatible API, or `stub`.
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    /// Name sent to the endpoint when it differs from `model_id`.
    #[serde(default)]
    pub served_name: Option<String>,
    /// In billions of parameters.
    #[serde(default)]
    pub parameter_count: Option<f64>,
    #[serde(default)]
    pub open_weight: bool,
    /// Endpoint supports `response_format: json_schema`.
    #[serde(default)]
    pub structured_output: bool,
}

impl ModelSpec {
    pub fn stub(model_id: &str) -> Self {
        ModelSpec {
            model_id: model_id.to_string(),
            endpoint: "stub".into(),
            auth_env: None,
            served_name: None,
            parameter_count: None,
            open_weight: true,
            structured_output: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.parameter_count {
            Some(p) if !(p > 0.0) => Err(format!("{}: parameter_count must be > 0", self.model_id)),
            _ => Ok(()),
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn chat(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<Completion, LlmError>;
    fn embed(&self, spec: &ModelSpec, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

/// Anything that maps texts to vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cond.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

/// Sends models whose endpoint is `stub` to the offline backend and the
/// rest over HTTP.
pub struct Router {
    stub: StubBackend,
    http: HttpBackend,
}

impl Router {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        Ok(Router {
            stub: StubBackend::new(),
            http: HttpBackend::new(timeout)?,
        })
    }

    fn pick(&self, spec: &ModelSpec) -> &dyn LlmBackend {
        if spec.endpoint == "stub" {
            &self.stub
        } else {
            &self.http
        }
    }
}

impl LlmBackend for Router {
    fn chat(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<Completion, LlmError> {
        self.pick(spec).chat(spec, request)
    }

    fn embed(&self, spec: &ModelSpec, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        self.pick(spec).embed(spec, texts)
    }
}

pub struct LlmGateway {
    registry: HashMap<String, ModelSpec>,
    backend: Arc<dyn LlmBackend>,
    cache: ResponseCache,
    retry: RetryPolicy,
    limit_per_endpoint: usize,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn LlmBackend>, cache: ResponseCache) -> Self {
        LlmGateway {
            registry: HashMap::new(),
            backend,
            cache,
            retry: RetryPolicy::default(),
            limit_per_endpoint: 4,
            limits: Mutex::new(HashMap::new()),
        }
    }

    /// Convenience: stub backend, in-memory cache, the given models.
    pub fn stub(models: &[&str]) -> Self {
        let mut g = LlmGateway::new(Arc::new(StubBackend::new()), ResponseCache::in_memory());
        for m in models {
            g.register(ModelSpec::stub(m));
        }
        g
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, per_endpoint: usize) -> Self {
        self.limit_per_endpoint = per_endpoint.max(1);
        self
    }

    pub fn register(&mut self, spec: ModelSpec) {
        self.registry.insert(spec.model_id.clone(), spec);
    }

    pub fn model(&self, model_id: &str) -> Result<&ModelSpec, LlmError> {
        self.registry
            .get(model_id)
            .ok_or_else(|| LlmError::UnknownModel(model_id.to_string()))
    }

    pub fn cache_dir(&self) -> Option<&PathBuf> {
        self.cache.dir()
    }

    fn semaphore(&self, endpoint: &str) -> Arc<Semaphore> {
        let mut map = self.limits.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(endpoint.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.limit_per_endpoint)))
            .clone()
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(LlmError::Temporary(message)) => {
                    if attempt == self.retry.max_retries {
                        return Err(LlmError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt as u32);
                    log::warn!("retrying after temporary failure ({message}), sleeping {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn call_backend(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<Completion, LlmError> {
        let sem = self.semaphore(&spec.endpoint);
        let _permit = sem.acquire();
        self.with_retries(|| self.backend.chat(spec, request))
    }

    /// One chat completion, served from cache when possible.
    ///
    /// With an `output_schema`, the content must be a JSON document matching
    /// it. A mismatch triggers one re-ask; a second mismatch is
    /// [`LlmError::Schema`] carrying the raw content. Only schema-valid
    /// responses are cached.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let spec = self.model(&request.model_id)?;
        let key = request.cache_key();
        if let Some(hit) = self.cache.get(&key) {
            let c: Completion = serde_json::from_value(hit.response)
                .map_err(|e| LlmError::Backend(format!("corrupt cache entry {key}: {e}")))?;
            return Ok(ChatResponse {
                content: c.content,
                finish_reason: c.finish_reason,
                usage: c.usage,
                cached: true,
                fingerprint: c.fingerprint,
            });
        }

        let mut completion = self.call_backend(spec, request)?;
        if let Some(schema) = &request.output_schema {
            if let Err(message) = check_schema(schema, &completion.content) {
                log::info!("{}: schema mismatch ({message}), re-asking", request.model_id);
                let mut retry = request.clone();
                retry.messages.push(Message::assistant(completion.content.clone()));
                retry.messages.push(Message::user(format!(
                    "Your reply did not match the required JSON schema ({message}). \
                     Reply again with only a JSON object that matches the schema."
                )));
                completion = self.call_backend(spec, &retry)?;
                if let Err(message) = check_schema(schema, &completion.content) {
                    return Err(LlmError::Schema {
                        message,
                        raw: completion.content,
                    });
                }
            }
        }
        self.cache.put(
            &key,
            "chat",
            &request.model_id,
            completion.fingerprint.as_deref(),
            serde_json::to_value(request).unwrap_or(Value::Null),
            serde_json::to_value(&completion).unwrap_or(Value::Null),
        )?;
        Ok(ChatResponse {
            content: completion.content,
            finish_reason: completion.finish_reason,
            usage: completion.usage,
            cached: false,
            fingerprint: completion.fingerprint,
        })
    }

    /// Unit-norm embeddings, one per text, each cached individually.
    pub fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let spec = self.model(model_id)?;
        let keys: Vec<String> = texts
            .iter()
            .map(|t| {
                let canonical = serde_json::json!({"kind": "embed", "model_id": model_id, "text": t});
                crate::util::sha256_hex(canonical.to_string().as_bytes())
            })
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| self.cache.get(k).and_then(|e| serde_json::from_value(e.response).ok()))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = {
                let sem = self.semaphore(&spec.endpoint);
                let _permit = sem.acquire();
                self.with_retries(|| self.backend.embed(spec, &batch))?
            };
            if vectors.len() != batch.len() {
                return Err(LlmError::Backend(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for (&i, v) in missing.iter().zip(vectors) {
                let v = normalize(v).ok_or_else(|| {
                    LlmError::Backend(format!("zero or non-finite embedding for {:?}", texts[i]))
                })?;
                self.cache.put(
                    &keys[i],
                    "embed",
                    model_id,
                    None,
                    serde_json::json!({"text": texts[i]}),
                    serde_json::to_value(&v).unwrap_or(Value::Null),
                )?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }

    /// An [`Embedder`] bound to one model.
    pub fn embedder<'a>(&'a self, model_id: &str) -> GatewayEmbedder<'a> {
        GatewayEmbedder {
            gateway: self,
            model_id: model_id.to_string(),
        }
    }
}

pub struct GatewayEmbedder<'a> {
    gateway: &'a LlmGateway,
    model_id: String,
}

impl Embedder for GatewayEmbedder<'_> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        self.gateway.embed(&self.model_id, texts)
    }
}

fn normalize(v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

/// Parses `content` as JSON and validates it against `schema`.
pub fn check_schema(schema: &Value, content: &str) -> Result<Value, String> {
    let value: Value = serde_json::from_str(strip_code_fence(content)).map_err(|e| format!("not JSON: {e}"))?;
    let validator = jsonschema::validator_for(schema).map_err(|e| format!("bad schema: {e}"))?;
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    if errors.is_empty() {
        Ok(value)
    } else {
        Err(errors.join("; "))
    }
}

/// Models sometimes wrap JSON in a markdown fence.
pub fn strip_code_fence(content: &str) -> &str {
    let t = content.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
        reply: String,
    }

    impl LlmBackend for Flaky {
        fn chat(&self, _: &ModelSpec, _: &ChatRequest) -> Result<Completion, LlmError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(LlmError::Temporary("503".into()));
            }
            Ok(Completion {
                content: self.reply.clone(),
                finish_reason: "stop".into(),
                usage: Usage::default(),
                fingerprint: Some("fp".into()),
            })
        }

        fn embed(&self, _: &ModelSpec, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    fn gateway(failures: usize, reply: &str) -> (LlmGateway, Arc<Flaky>) {
        let backend = Arc::new(Flaky {
            failures,
            calls: AtomicUsize::new(0),
            reply: reply.into(),
        });
        let mut g = LlmGateway::new(backend.clone(), ResponseCache::in_memory()).with_retry(RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(1),
        });
        g.register(ModelSpec::stub("m"));
        (g, backend)
    }

    fn req() -> ChatRequest {
        ChatRequest::new("m", vec![Message::user("hi")], 1)
    }

    #[test]
    fn second_call_is_cached() {
        let (g, b) = gateway(0, "hello");
        let a = g.complete(&req()).unwrap();
        let c = g.complete(&req()).unwrap();
        assert!(!a.cached && c.cached);
        assert_eq!(a.content, c.content);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_then_gives_up() {
        let (g, b) = gateway(3, "ok");
        assert_eq!(g.complete(&req()).unwrap().content, "ok");
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);

        let (g, b) = gateway(10, "ok");
        match g.complete(&req()) {
            Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn schema_mismatch_reasks_once_then_errors() {
        let schema = serde_json::json!({"type": "object", "required": ["a"]});
        let (g, b) = gateway(0, "{\"b\": 1}");
        match g.complete(&req().with_schema(schema.clone())) {
            Err(LlmError::Schema { raw, .. }) => assert_eq!(raw, "{\"b\": 1}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(b.calls.load(Ordering::SeqCst), 2);
        let (g, _) = gateway(0, "```json\n{\"a\": 1}\n```");
        assert!(g.complete(&req().with_schema(schema)).is_ok());
    }

    #[test]
    fn request_validation() {
        let (g, _) = gateway(0, "x");
        let mut r = req();
        r.temperature = -0.1;
        assert!(matches!(g.complete(&r), Err(LlmError::InvalidRequest(_))));
        let r = ChatRequest::new("m", vec![], 1);
        assert!(matches!(g.complete(&r), Err(LlmError::InvalidRequest(_))));
        let r = ChatRequest::new("nope", vec![Message::user("x")], 1);
        assert!(matches!(g.complete(&r), Err(LlmError::UnknownModel(_))));
    }

    #[test]
    fn embeddings_are_unit_norm_and_cached() {
        let (g, _) = gateway(0, "");
        assert!(g.embed("m", &[]).unwrap().is_empty());
        let texts = vec!["abc".to_string(), "abc".to_string(), "hello world".to_string()];
        let v = g.embed("m", &texts).unwrap();
        for x in &v {
            let n: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn parallelism_is_bounded() {
        struct Counting {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl LlmBackend for Counting {
            fn chat(&self, _: &ModelSpec, r: &ChatRequest) -> Result<Completion, LlmError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(5));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(Completion {
                    content: r.seed.to_string(),
                    finish_reason: "stop".into(),
                    usage: Usage::default(),
                    fingerprint: None,
                })
            }
            fn embed(&self, _: &ModelSpec, _: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
                unreachable!()
            }
        }
        let backend = Arc::new(Counting {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let mut g = LlmGateway::new(backend.clone(), ResponseCache::in_memory()).with_parallelism(2);
        g.register(ModelSpec::stub("m"));
        thread::scope(|s| {
            for seed in 0..8 {
                let g = &g;
                s.spawn(move || g.complete(&ChatRequest::new("m", vec![Message::user("x")], seed)).unwrap());
            }
        });
        assert!(backend.peak.load(Ordering::SeqCst) <= 2);
    }
}
