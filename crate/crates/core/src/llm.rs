//! Chat-completion client with retries, token accounting, and a
//! record/replay cache.
//!
//! The wire contract is a neutral chat-completions shape: POST
//! `<base>/chat` with `{"model", "messages": [{"role", "content"}],
//! "temperature", "max_tokens"}` returning `{"text", "usage": {...}}`.
//! Responses are cached on disk keyed by a content hash of
//! (model_name, system_text, user_text, temperature, max_output_tokens);
//! replay mode serves only from that cache, which is what makes whole
//! pipeline runs reproducible with zero network traffic.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::provider::{backoff_delay, CallCounters, CounterSnapshot, ProviderMode, ResponseCache};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u64 = 4096;
const MAX_ATTEMPTS: u32 = 3;

/// One chat completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u64,
}

impl ChatRequest {
    /// Temperature is pinned to 0 for every agent: determinism beats
    /// creativity in a regression-tested pipeline.
    pub fn new(
        model_name: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Result<Self> {
        let req = Self {
            model_name: model_name.into(),
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        };
        req.validate()?;
        Ok(req)
    }

    fn validate(&self) -> Result<()> {
        if self.model_name.trim().is_empty() {
            return Err(Error::validation("chat request needs a model name"));
        }
        if self.system_text.is_empty() || self.user_text.is_empty() {
            return Err(Error::validation("chat request texts must be non-empty"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::validation("temperature must be finite and non-negative"));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::validation("max_output_tokens must be positive"));
        }
        Ok(())
    }

    /// Conservative estimate of prompt tokens for window guarding.
    pub fn estimated_input_tokens(&self) -> u64 {
        estimate_tokens(&self.system_text) + estimate_tokens(&self.user_text)
    }

    /// Serialized form of exactly the fields that define cache identity.
    pub fn cache_key_material(&self) -> String {
        serde_json::to_string(&(
            &self.model_name,
            &self.system_text,
            &self.user_text,
            self.temperature,
            self.max_output_tokens,
        ))
        .expect("tuple serialization cannot fail")
    }
}

/// Completion result plus token accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached: bool,
}

/// Capabilities of the model under test. Context windows are
/// operator-supplied configuration, not discovered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_name: String,
    pub context_window_tokens: u64,
}

impl ModelProfile {
    pub fn new(model_name: impl Into<String>, context_window_tokens: u64) -> Result<Self> {
        if context_window_tokens == 0 {
            return Err(Error::validation("context window must be positive"));
        }
        Ok(Self { model_name: model_name.into(), context_window_tokens })
    }

    /// Whether all retrieved CWEs can be analyzed in one prompt.
    pub fn supports_batch_cwe(&self, context_window_threshold: u64) -> bool {
        self.context_window_tokens >= context_window_threshold
    }
}

/// Deterministic upper-bound token estimate: ceil(bytes / 3).
///
/// Deliberately not a model tokenizer — it is only used for conservative
/// mode selection and overflow guarding.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(3)
}

#[derive(Debug, Serialize, Deserialize)]
struct WireMessage {
    role: String,
    content: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatWireRequest {
    model: String,
    messages: Vec<WireMessage>,
    temperature: f64,
    max_tokens: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireUsage {
    #[serde(default)]
    input_tokens: u64,
    #[serde(default)]
    output_tokens: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatWireResponse {
    text: String,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// Cache entry: the request is stored beside the response so cache files
/// are self-describing and auditable.
#[derive(Debug, Serialize, Deserialize)]
struct CachedCompletion {
    request: ChatRequest,
    response: ChatResponse,
}

/// Shared chat client; cheap to clone via [`Arc`].
pub struct LlmClient {
    base_url: String,
    api_key: Option<String>,
    mode: ProviderMode,
    cache: ResponseCache,
    counters: CallCounters,
    http: reqwest::Client,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("base_url", &self.base_url)
            .field("mode", &self.mode)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl LlmClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        mode: ProviderMode,
        cache_dir: &Path,
    ) -> Arc<Self> {
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .expect("reqwest client construction cannot fail with static options");
        Arc::new(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            mode,
            cache: ResponseCache::new(cache_dir, "llm"),
            counters: CallCounters::default(),
            http,
        })
    }

    pub fn mode(&self) -> ProviderMode {
        self.mode
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Writes a synthetic cache entry for `request`, as if the given text
    /// had been recorded from a live call. This is how replayable fixtures
    /// are constructed without a provider.
    pub fn seed_response(&self, request: &ChatRequest, text: &str) -> Result<()> {
        let response = ChatResponse {
            text: text.to_string(),
            input_tokens: request.estimated_input_tokens(),
            output_tokens: estimate_tokens(text),
            cached: false,
        };
        self.cache.write(
            &request.cache_key_material(),
            &CachedCompletion { request: request.clone(), response },
        )
    }

    /// Runs one completion, honoring the provider mode.
    ///
    /// The context-window guard fires before any cache or network activity,
    /// so an oversized prompt can never cost a call.
    pub async fn complete(
        &self,
        request: &ChatRequest,
        profile: &ModelProfile,
    ) -> Result<ChatResponse> {
        request.validate()?;
        let estimated = request.estimated_input_tokens();
        if estimated > profile.context_window_tokens {
            return Err(Error::new(
                ErrorKind::ContextOverflow,
                format!(
                    "prompt estimated at {estimated} tokens exceeds {} window of {} tokens",
                    profile.model_name, profile.context_window_tokens
                ),
            ));
        }

        let key = request.cache_key_material();
        if self.mode != ProviderMode::Passthrough {
            if let Some(entry) = self.cache.read::<CachedCompletion>(&key)? {
                self.counters.record_cache_hit();
                return Ok(ChatResponse { cached: true, ..entry.response });
            }
            if self.mode == ProviderMode::Replay {
                return Err(Error::new(
                    ErrorKind::CacheMiss,
                    format!(
                        "replay mode has no cached completion for model {} (prompt sha {})",
                        request.model_name,
                        &crate::util::sha256_hex(key.as_bytes())[..12]
                    ),
                ));
            }
        }

        let response = self.live_call(request).await?;
        if self.mode == ProviderMode::Record {
            self.cache.write(
                &key,
                &CachedCompletion { request: request.clone(), response: response.clone() },
            )?;
            self.counters.record_cache_write();
        }
        Ok(response)
    }

    async fn live_call(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let url = format!("{}/chat", self.base_url);
        let wire = ChatWireRequest {
            model: request.model_name.clone(),
            messages: vec![
                WireMessage { role: "system".into(), content: request.system_text.clone() },
                WireMessage { role: "user".into(), content: request.user_text.clone() },
            ],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };

        let mut last_error = Error::provider("no attempt made");
        for attempt in 1..=MAX_ATTEMPTS {
            self.counters.record_live_call();
            match self.attempt_once(&url, &wire, request).await {
                Ok(response) => return Ok(response),
                Err(e) => last_error = e,
            }
            if attempt < MAX_ATTEMPTS {
                tokio::time::sleep(backoff_delay(attempt)).await;
            }
        }
        Err(last_error)
    }

    async fn attempt_once(
        &self,
        url: &str,
        wire: &ChatWireRequest,
        request: &ChatRequest,
    ) -> Result<ChatResponse> {
        let mut builder = self.http.post(url).json(wire);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                Error::new(ErrorKind::Timeout, format!("chat request to {url}: {e}"))
            } else {
                Error::provider(format!("chat request to {url}: {e}"))
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            let detail = body.chars().take(200).collect::<String>();
            return Err(Error::provider(format!("chat provider returned {status}: {detail}")));
        }
        let body: ChatWireResponse = response
            .json()
            .await
            .map_err(|e| Error::provider(format!("malformed chat response: {e}")))?;
        let usage = body.usage.unwrap_or_default();
        Ok(ChatResponse {
            input_tokens: if usage.input_tokens > 0 {
                usage.input_tokens
            } else {
                request.estimated_input_tokens()
            },
            output_tokens: if usage.output_tokens > 0 {
                usage.output_tokens
            } else {
                estimate_tokens(&body.text)
            },
            text: body.text,
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256_hex;
    use proptest::prelude::*;

    fn block_on<F: std::future::Future>(fut: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap()
            .block_on(fut)
    }

    fn request() -> ChatRequest {
        ChatRequest::new("test-model", "system", "user").unwrap()
    }

    #[test]
    fn token_estimate_matches_formula() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("ab"), 1);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcd"), 2);
        assert_eq!(estimate_tokens(&"x".repeat(300)), 100);
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("m", "", "u").is_err());
        assert!(ChatRequest::new("m", "s", "").is_err());
        assert!(ChatRequest::new("", "s", "u").is_err());
        let mut req = request();
        req.temperature = f64::NAN;
        assert!(req.validate().is_err());
        req = request();
        req.max_output_tokens = 0;
        assert!(req.validate().is_err());
        assert_eq!(request().temperature, 0.0);
    }

    #[test]
    fn cache_key_sensitive_to_every_component() {
        let base = request();
        let mut variants = vec![base.clone()];
        let mut v = base.clone();
        v.model_name = "other-model".into();
        variants.push(v);
        let mut v = base.clone();
        v.system_text = "system2".into();
        variants.push(v);
        let mut v = base.clone();
        v.user_text = "user2".into();
        variants.push(v);
        let mut v = base.clone();
        v.temperature = 0.5;
        variants.push(v);
        let mut v = base.clone();
        v.max_output_tokens = 99;
        variants.push(v);

        let hashes: Vec<String> = variants
            .iter()
            .map(|r| sha256_hex(r.cache_key_material().as_bytes()))
            .collect();
        for i in 0..hashes.len() {
            for j in (i + 1)..hashes.len() {
                assert_ne!(hashes[i], hashes[j], "variants {i} and {j} collide");
            }
        }
    }

    #[test]
    fn overflow_guard_fires_before_any_call() {
        let tmp = tempfile::tempdir().unwrap();
        // Unroutable endpoint: reaching the network would error differently.
        let client =
            LlmClient::new("http://127.0.0.1:1", None, ProviderMode::Passthrough, tmp.path());
        let profile = ModelProfile::new("tiny", 2).unwrap();
        let err = block_on(client.complete(&request(), &profile)).unwrap_err();
        assert_eq!(err.kind, ErrorKind::ContextOverflow);
        assert_eq!(client.counters().live_calls, 0);
    }

    #[test]
    fn replay_miss_is_cache_miss_error() {
        let tmp = tempfile::tempdir().unwrap();
        let client = LlmClient::new("http://127.0.0.1:1", None, ProviderMode::Replay, tmp.path());
        let profile = ModelProfile::new("m", 1_000_000).unwrap();
        let err = block_on(client.complete(&request(), &profile)).unwrap_err();
        assert_eq!(err.kind, ErrorKind::CacheMiss);
        assert_eq!(client.counters().live_calls, 0);
    }

    #[test]
    fn batch_support_threshold() {
        let profile = ModelProfile::new("m", 32_768).unwrap();
        assert!(profile.supports_batch_cwe(32_768));
        assert!(profile.supports_batch_cwe(1_000));
        assert!(!profile.supports_batch_cwe(32_769));
        assert!(ModelProfile::new("m", 0).is_err());
    }

    proptest! {
        #[test]
        fn estimate_is_monotone_under_concat(a in ".{0,64}", b in ".{0,64}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a));
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&b));
            prop_assert!(
                estimate_tokens(&joined) <= estimate_tokens(&a) + estimate_tokens(&b)
            );
        }
    }
}
