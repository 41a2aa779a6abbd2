//! Embedding providers and the vectors they produce.
//!
//! Two providers implement the same contract:
//!
//! * an HTTP client for any service speaking the `/embed` wire protocol
//!   (`{"texts": [...]}` → `{"vectors": [[...]], "dimension": n}`), and
//! * a deterministic in-process mock — feature-hashed bag-of-words — that
//!   gives tests semantics-bearing vectors with zero network traffic.
//!
//! Every vector handed out is unit-normalized, so downstream cosine
//! similarity reduces to a dot product. HTTP responses are cached on disk
//! keyed by (provider, dimension, text) content hash, honoring the global
//! record/replay/passthrough mode.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ErrorKind, Result};
use crate::provider::{CallCounters, CounterSnapshot, ProviderMode, ResponseCache};

/// A fixed-length real vector tagged with the field it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_field: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source_field: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::embedding("embedding vector must be non-empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::embedding(format!("non-finite embedding value {bad}")));
        }
        Ok(Self { values, source_field: source_field.into() })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales to unit L2 norm; a zero vector cannot be normalized.
    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(Error::new(ErrorKind::ZeroVector, "cannot normalize a zero vector"));
        }
        for v in &mut self.values {
            *v /= norm;
        }
        Ok(self)
    }

    /// Re-tags the vector with a different source field.
    pub fn with_field(mut self, source_field: impl Into<String>) -> Self {
        self.source_field = source_field.into();
        self
    }
}

/// Wire request for the `/embed` endpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireRequest {
    pub texts: Vec<String>,
}

/// Wire response from the `/embed` endpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dimension: usize,
}

/// Disk-cache entry for one embedded text.
#[derive(Debug, Serialize, Deserialize)]
struct CachedEmbedding {
    provider: String,
    dimension: usize,
    text_sha256: String,
    values: Vec<f64>,
}

enum Backend {
    /// Deterministic feature-hashed bag-of-words (the test/offline provider).
    Hashing,
    /// Remote provider speaking the `/embed` wire contract.
    Http { base_url: String, client: reqwest::Client },
}

/// Embedding provider handle; cheap to clone via [`Arc`].
pub struct Embedder {
    backend: Backend,
    dimension: usize,
    mode: ProviderMode,
    cache: Option<ResponseCache>,
    counters: CallCounters,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("provider", &self.provider_name())
            .field("dimension", &self.dimension)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Embedder {
    /// The in-process mock: pure, deterministic, never touches disk or
    /// network, and therefore ignores the provider mode.
    pub fn hashing(dimension: usize) -> Arc<Self> {
        Arc::new(Self {
            backend: Backend::Hashing,
            dimension,
            mode: ProviderMode::Passthrough,
            cache: None,
            counters: CallCounters::default(),
        })
    }

    /// HTTP-backed provider with a disk cache honoring `mode`.
    pub fn http(
        base_url: impl Into<String>,
        dimension: usize,
        mode: ProviderMode,
        cache_dir: &Path,
    ) -> Arc<Self> {
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .expect("reqwest client construction cannot fail with static options");
        Arc::new(Self {
            backend: Backend::Http { base_url: base_url.into().trim_end_matches('/').to_string(), client },
            dimension,
            mode,
            cache: Some(ResponseCache::new(cache_dir, "embed")),
            counters: CallCounters::default(),
        })
    }

    pub fn provider_name(&self) -> &'static str {
        match self.backend {
            Backend::Hashing => "hashing-mock",
            Backend::Http { .. } => "http",
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Embeds one text; the result is unit-normalized and tagged with
    /// `source_field`.
    pub async fn embed_text(&self, text: &str, source_field: &str) -> Result<EmbeddingVector> {
        let mut vectors = self.embed_many(std::slice::from_ref(&text.to_string()), source_field).await?;
        Ok(vectors.remove(0))
    }

    /// Embeds a batch of texts in order. Cached entries are served from
    /// disk; the remainder goes to the provider in a single wire call.
    pub async fn embed_many(
        &self,
        texts: &[String],
        source_field: &str,
    ) -> Result<Vec<EmbeddingVector>> {
        for text in texts {
            if text.trim().is_empty() {
                return Err(Error::embedding("cannot embed empty text"));
            }
        }

        match &self.backend {
            Backend::Hashing => texts
                .iter()
                .map(|t| self.hash_embed(t, source_field))
                .collect(),
            Backend::Http { .. } => self.http_embed_many(texts, source_field).await,
        }
    }

    fn cache_key(&self, text: &str) -> String {
        format!("embed|{}|{}|{}", self.provider_name(), self.dimension, text)
    }

    async fn http_embed_many(
        &self,
        texts: &[String],
        source_field: &str,
    ) -> Result<Vec<EmbeddingVector>> {
        let cache = self.cache.as_ref().expect("http embedder always has a cache");
        let mut resolved: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut pending: Vec<usize> = Vec::new();

        if self.mode != ProviderMode::Passthrough {
            for (i, text) in texts.iter().enumerate() {
                if let Some(entry) = cache.read::<CachedEmbedding>(&self.cache_key(text))? {
                    if entry.values.len() != self.dimension {
                        return Err(Error::dimension_mismatch(self.dimension, entry.values.len()));
                    }
                    self.counters.record_cache_hit();
                    resolved[i] =
                        Some(EmbeddingVector::new(entry.values, source_field)?.normalized()?);
                } else {
                    pending.push(i);
                }
            }
        } else {
            pending = (0..texts.len()).collect();
        }

        if !pending.is_empty() {
            if self.mode == ProviderMode::Replay {
                let text = &texts[pending[0]];
                return Err(Error::new(
                    ErrorKind::CacheMiss,
                    format!(
                        "replay mode has no cached embedding for text starting {:?}",
                        text.chars().take(32).collect::<String>()
                    ),
                ));
            }
            let uncached: Vec<String> = pending.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.http_call(&uncached).await?;
            for (&i, values) in pending.iter().zip(vectors) {
                if self.mode == ProviderMode::Record {
                    let entry = CachedEmbedding {
                        provider: self.provider_name().to_string(),
                        dimension: self.dimension,
                        text_sha256: hex::encode(Sha256::digest(texts[i].as_bytes())),
                        values: values.clone(),
                    };
                    cache.write(&self.cache_key(&texts[i]), &entry)?;
                    self.counters.record_cache_write();
                }
                resolved[i] = Some(EmbeddingVector::new(values, source_field)?.normalized()?);
            }
        }

        Ok(resolved.into_iter().map(|v| v.expect("all slots resolved")).collect())
    }

    async fn http_call(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let Backend::Http { base_url, client } = &self.backend else {
            unreachable!("http_call only runs for the http backend");
        };
        self.counters.record_live_call();
        let url = format!("{base_url}/embed");
        let response = client
            .post(&url)
            .json(&EmbedWireRequest { texts: texts.to_vec() })
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    Error::new(ErrorKind::Timeout, format!("embedding request to {url}: {e}"))
                } else {
                    Error::embedding(format!("embedding request to {url}: {e}"))
                }
            })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(Error::embedding(format!(
                "embedding provider returned {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        let body: EmbedWireResponse = response
            .json()
            .await
            .map_err(|e| Error::embedding(format!("malformed embedding response: {e}")))?;
        if body.dimension != self.dimension {
            return Err(Error::dimension_mismatch(self.dimension, body.dimension));
        }
        if body.vectors.len() != texts.len() {
            return Err(Error::embedding(format!(
                "asked for {} embeddings, provider returned {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        for v in &body.vectors {
            if v.len() != self.dimension {
                return Err(Error::dimension_mismatch(self.dimension, v.len()));
            }
        }
        Ok(body.vectors)
    }

    /// Feature hashing: lowercase word tokens are counted into buckets
    /// chosen by SHA-256, then the histogram is unit-normalized.
    fn hash_embed(&self, text: &str, source_field: &str) -> Result<EmbeddingVector> {
        let mut values = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty())
        {
            let lowered = token.to_lowercase();
            let digest = Sha256::digest(lowered.as_bytes());
            let bucket = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
                % self.dimension as u64;
            values[bucket as usize] += 1.0;
            any = true;
        }
        if !any {
            return Err(Error::embedding(format!(
                "text has no embeddable tokens: {:?}",
                text.chars().take(32).collect::<String>()
            )));
        }
        EmbeddingVector::new(values, source_field)?.normalized()
    }
}
