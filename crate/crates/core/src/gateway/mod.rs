//! Uniform access to chat and embedding providers: prompt rendering,
//! content-addressed caching, schema validation with retries, and rate
//! limiting.

pub mod cache;
#[cfg(feature = "external")]
pub mod http;
pub mod limit;
pub mod prompts;
pub mod schema;
pub mod stub;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cache::ResponseCache;
pub use limit::{InFlight, TokenBucket};
pub use prompts::PromptCatalog;
pub use schema::Schema;
pub use stub::{StubChat, StubEmbedding, StubScript};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
/// Retries after the first attempt for schema or transport failures.
pub const DEFAULT_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` has unbound variables: {missing:?}")]
    UnboundVariables { template: String, missing: Vec<String> },
    #[error("transport failure for request {fingerprint}: {message}")]
    Transport { fingerprint: String, message: String },
    #[error("invalid reply for request {fingerprint}: {message}")]
    Schema { fingerprint: String, message: String },
    #[error("embedding failure: {0}")]
    Embedding(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub template: String,
    pub variables: BTreeMap<String, String>,
    pub params: DecodingParams,
    pub schema: Schema,
}

impl GatewayRequest {
    pub fn new(template: &str, schema: Schema) -> Self {
        GatewayRequest {
            template: template.to_string(),
            variables: BTreeMap::new(),
            params: DecodingParams::default(),
            schema,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayResponse {
    pub text: String,
    /// Present iff the reply passed schema validation.
    pub payload: Option<Value>,
    pub cache_hit: bool,
    pub provider: String,
    pub latency_ms: u64,
    pub attempts: usize,
}

/// What a chat provider sees: the rendered prompt plus the template id and
/// variables it came from.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub template: &'a str,
    pub prompt: &'a str,
    pub variables: &'a BTreeMap<String, String>,
    pub params: &'a DecodingParams,
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> String;
    fn chat(&self, request: &ChatRequest<'_>) -> Result<String, String>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    template: &'a str,
    version: u32,
    variables: &'a BTreeMap<String, String>,
    params: &'a DecodingParams,
    schema: &'static str,
    provider: &'a str,
    attempt: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub completions: usize,
    pub transport_calls: usize,
    pub cache_hits: usize,
    pub embedded_texts: usize,
}

pub struct Gateway {
    catalog: PromptCatalog,
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    cache: Option<ResponseCache>,
    embed_cache: RwLock<HashMap<String, Vec<f64>>>,
    retries: usize,
    bucket: Option<TokenBucket>,
    in_flight: InFlight,
    completions: AtomicUsize,
    transport_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    embedded: AtomicUsize,
}

impl Gateway {
    /// A gateway with the built-in prompt catalog and an in-memory cache.
    pub fn new(chat: Arc<dyn ChatProvider>, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Gateway {
            catalog: PromptCatalog::builtin(),
            chat,
            embedder,
            cache: Some(ResponseCache::in_memory()),
            embed_cache: RwLock::default(),
            retries: DEFAULT_RETRIES,
            bucket: None,
            in_flight: InFlight::new(8),
            completions: AtomicUsize::new(0),
            transport_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            embedded: AtomicUsize::new(0),
        }
    }

    /// Stub chat and stub embeddings.
    pub fn stub() -> Self {
        Self::new(Arc::new(StubChat::new()), Arc::new(StubEmbedding::default()))
    }

    pub fn with_catalog(mut self, catalog: PromptCatalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn with_cache(mut self, cache: Option<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_rate_limit(mut self, bucket: TokenBucket) -> Self {
        self.bucket = Some(bucket);
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.in_flight = InFlight::new(cap);
        self
    }

    pub fn chat_provider_id(&self) -> String {
        self.chat.id()
    }

    pub fn embedding_provider_id(&self) -> String {
        self.embedder.id()
    }

    pub fn embedding_dimension(&self) -> usize {
        self.embedder.dimension()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            completions: self.completions.load(Ordering::SeqCst),
            transport_calls: self.transport_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            embedded_texts: self.embedded.load(Ordering::SeqCst),
        }
    }

    /// Stable hash of (template, variables, params, provider), excluding
    /// the attempt number.
    pub fn fingerprint(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let template = self.catalog.get(&request.template)?;
        let provider = self.chat.id();
        Ok(cache::content_key(&self.key_material(request, template.version, &provider, 0))[..16].to_string())
    }

    fn key_material(&self, request: &GatewayRequest, version: u32, provider: &str, attempt: usize) -> String {
        serde_json::to_string(&KeyMaterial {
            template: &request.template,
            version,
            variables: &request.variables,
            params: &request.params,
            schema: request.schema.id(),
            provider,
            attempt,
        })
        .expect("serializable")
    }

    pub fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        self.complete_with(request, |v| Ok(v.clone())).map(|(_, r)| r)
    }

    /// Completes `request`, retrying while the reply fails the schema or
    /// `check`. Each attempt has its own cache entry, so a replayed run
    /// sees the same sequence of replies.
    pub fn complete_with<T>(
        &self,
        request: &GatewayRequest,
        check: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<(T, GatewayResponse), GatewayError> {
        let template = self.catalog.get(&request.template)?;
        let prompt = template.render(&request.variables)?;
        let provider = self.chat.id();
        let fingerprint = self.fingerprint(request)?;
        self.completions.fetch_add(1, Ordering::SeqCst);
        let mut last: Option<GatewayError> = None;
        for attempt in 0..=self.retries {
            let material = self.key_material(request, template.version, &provider, attempt);
            let started = Instant::now();
            let cached = self.cache.as_ref().and_then(|c| c.get(&material));
            let cache_hit = cached.is_some();
            let text = match cached {
                Some(t) => {
                    self.cache_hits.fetch_add(1, Ordering::SeqCst);
                    t
                }
                None => {
                    let reply = self.transport(&ChatRequest {
                        template: &request.template,
                        prompt: &prompt,
                        variables: &request.variables,
                        params: &request.params,
                    });
                    match reply {
                        Ok(t) => {
                            if let Some(c) = &self.cache {
                                c.put(&material, &t);
                            }
                            t
                        }
                        Err(message) => {
                            tracing::warn!(%fingerprint, attempt, %message, "provider call failed");
                            last = Some(GatewayError::Transport {
                                fingerprint: fingerprint.clone(),
                                message,
                            });
                            continue;
                        }
                    }
                }
            };
            let checked = request.schema.validate(&text).and_then(|v| check(&v).map(|t| (t, v)));
            match checked {
                Ok((out, payload)) => {
                    let response = GatewayResponse {
                        text,
                        payload: Some(payload),
                        cache_hit,
                        provider,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts: attempt + 1,
                    };
                    return Ok((out, response));
                }
                Err(message) => {
                    tracing::debug!(%fingerprint, attempt, %message, "reply rejected");
                    last = Some(GatewayError::Schema {
                        fingerprint: fingerprint.clone(),
                        message,
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn transport(&self, request: &ChatRequest<'_>) -> Result<String, String> {
        if let Some(b) = &self.bucket {
            b.acquire();
        }
        let _permit = self.in_flight.enter();
        self.transport_calls.fetch_add(1, Ordering::SeqCst);
        self.chat.chat(request)
    }

    /// Embeds each text; vectors are cached per (provider, text).
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let provider = self.embedder.id();
        let dim = self.embedder.dimension();
        let key = |t: &str| format!("{provider}\u{0}{t}");
        let mut missing: Vec<String> = {
            let cache = self.embed_cache.read().expect("embed cache lock");
            texts.iter().filter(|t| !cache.contains_key(&key(t))).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let mut err = String::new();
            let mut got = None;
            for _ in 0..=self.retries {
                if let Some(b) = &self.bucket {
                    b.acquire();
                }
                let _permit = self.in_flight.enter();
                match self.embedder.embed(&missing) {
                    Ok(v) => {
                        got = Some(v);
                        break;
                    }
                    Err(e) => err = e,
                }
            }
            let vectors = got.ok_or_else(|| GatewayError::Embedding(err))?;
            if vectors.len() != missing.len() {
                return Err(GatewayError::Embedding(format!(
                    "provider returned {} vectors for {} texts",
                    vectors.len(),
                    missing.len()
                )));
            }
            let mut cache = self.embed_cache.write().expect("embed cache lock");
            for (t, v) in missing.iter().zip(vectors) {
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(GatewayError::Embedding(format!(
                        "provider returned a malformed vector of length {} (dimension {dim})",
                        v.len()
                    )));
                }
                cache.insert(key(t), v);
            }
            self.embedded.fetch_add(missing.len(), Ordering::SeqCst);
        }
        let cache = self.embed_cache.read().expect("embed cache lock");
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector {
                values: cache[&key(t)].clone(),
                provider_id: provider.clone(),
            })
            .collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0).values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stub::ScriptEntry;

    fn select_request() -> GatewayRequest {
        GatewayRequest::new(prompts::SELECT_RULE, Schema::SelectedRules)
            .var("query", "SELECT 1")
            .var("recipes", "- use FILTER_MERGE")
            .var("rules", "- FILTER_MERGE: two filters")
    }

    #[test]
    fn stub_replies_are_deterministic() {
        let a = Gateway::stub().complete(&select_request()).unwrap();
        let b = Gateway::stub().complete(&select_request()).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.payload.unwrap()["selected_rules"][0], "FILTER_MERGE");
    }

    #[test]
    fn second_identical_request_hits_cache() {
        let chat = Arc::new(StubChat::new());
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let first = gw.complete(&select_request()).unwrap();
        let second = gw.complete(&select_request()).unwrap();
        assert!(!first.cache_hit);
        assert!(second.cache_hit);
        assert_eq!(chat.transcript().len(), 1);
        assert_eq!(gw.stats().transport_calls, 1);
    }

    #[test]
    fn prose_reply_is_retried_then_rejected() {
        let chat = Arc::new(StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::always(prompts::SELECT_RULE, "I would pick FILTER_MERGE.")],
        }));
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let err = gw.complete(&select_request()).unwrap_err();
        assert!(matches!(err, GatewayError::Schema { .. }), "{err:?}");
        assert_eq!(chat.transcript().len(), 1 + DEFAULT_RETRIES);
    }

    #[test]
    fn retry_recovers_after_bad_replies() {
        let chat = Arc::new(StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::times(prompts::SELECT_RULE, "nope", 2)],
        }));
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let r = gw.complete(&select_request()).unwrap();
        assert_eq!(r.attempts, 3);
    }

    #[test]
    fn caller_check_drives_retries() {
        let gw = Gateway::stub();
        let err = gw
            .complete_with(&select_request(), |_| Err::<(), _>("never good".to_string()))
            .unwrap_err();
        match err {
            GatewayError::Schema { message, .. } => assert_eq!(message, "never good"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbound_variables_are_rejected_before_transport() {
        let chat = Arc::new(StubChat::new());
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let req = GatewayRequest::new(prompts::SELECT_RULE, Schema::SelectedRules).var("query", "q");
        assert!(matches!(gw.complete(&req), Err(GatewayError::UnboundVariables { .. })));
        assert!(chat.transcript().is_empty());
    }

    #[test]
    fn cache_keys_separate_every_component() {
        let gw = Gateway::stub();
        let base = select_request();
        let mut variants = vec![base.clone()];
        variants.push(base.clone().var("query", "SELECT 2"));
        let mut p = base.clone();
        p.params.temperature = 0.2;
        variants.push(p);
        let mut s = base.clone();
        s.schema = Schema::Order;
        variants.push(s);
        let mut t = base.clone();
        t.template = prompts::ORDER_GROUP.to_string();
        variants.push(t.var("operator", "join"));
        let keys: std::collections::BTreeSet<_> = variants.iter().map(|r| gw.fingerprint(r).unwrap()).collect();
        assert_eq!(keys.len(), variants.len());
    }

    #[test]
    fn embeddings_are_cached_and_unit_norm() {
        let gw = Gateway::stub();
        let texts = vec!["a b".to_string(), "c".to_string(), "a b".to_string()];
        let v = gw.embed(&texts).unwrap();
        assert_eq!(v[0], v[2]);
        assert_eq!(gw.stats().embedded_texts, 2);
        for e in &v {
            let n: f64 = e.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        gw.embed(&texts).unwrap();
        assert_eq!(gw.stats().embedded_texts, 2);
    }
}
