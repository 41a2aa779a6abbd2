//! Pipeline configuration: a flat key/value TOML document plus environment
//! overrides.
//!
//! Environment variables win over file values so that credentials and
//! endpoints can be injected without editing checked-in config files:
//! `SRR_LLM_API_KEY`, `SRR_LLM_BASE_URL`, `SRR_EMBED_BASE_URL`, `SRR_CACHE_DIR`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};

pub const ENV_LLM_API_KEY: &str = "SRR_LLM_API_KEY";
pub const ENV_LLM_BASE_URL: &str = "SRR_LLM_BASE_URL";
pub const ENV_EMBED_BASE_URL: &str = "SRR_EMBED_BASE_URL";
pub const ENV_CACHE_DIR: &str = "SRR_CACHE_DIR";

/// Selects the embedding provider without a network endpoint: a deterministic
/// feature-hashed bag-of-words embedder.
pub const EMBED_PROVIDER_MOCK: &str = "mock";

/// How retrieved CWEs are presented to the detection agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    /// One prompt per retrieved CWE.
    Iterative,
    /// All retrieved CWEs in a single prompt.
    Batch,
    /// Batch when the model context window allows it, else iterative.
    Auto,
}

impl std::fmt::Display for DetectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectionMode::Iterative => write!(f, "iterative"),
            DetectionMode::Batch => write!(f, "batch"),
            DetectionMode::Auto => write!(f, "auto"),
        }
    }
}

impl std::str::FromStr for DetectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterative" => Ok(DetectionMode::Iterative),
            "batch" => Ok(DetectionMode::Batch),
            "auto" => Ok(DetectionMode::Auto),
            other => Err(Error::parse(format!("unknown detection mode '{other}'"))),
        }
    }
}

/// Validated pipeline configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weight of the RTL summary embedding in the retrieval query.
    pub alpha: f64,
    /// Weight of the hardware-signature embedding in the retrieval query.
    pub beta: f64,
    /// Number of CWEs retrieved per design.
    pub top_k: usize,
    pub detection_mode: DetectionMode,
    /// Minimum context window (tokens) for a model to qualify for batch mode.
    pub context_window_threshold: u64,
    pub embedding_dimension: usize,
    /// Chat provider base URL; empty means "not configured".
    pub llm_base_url: String,
    /// Embedding provider base URL, or `"mock"` for the hashing embedder.
    pub embed_base_url: String,
    pub cache_dir: PathBuf,
    /// Injected from the environment only; never written back to disk.
    #[serde(skip)]
    pub llm_api_key: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            top_k: 10,
            detection_mode: DetectionMode::Auto,
            context_window_threshold: 32_768,
            embedding_dimension: 768,
            llm_base_url: String::new(),
            embed_base_url: EMBED_PROVIDER_MOCK.to_string(),
            cache_dir: PathBuf::from(".srr-cache"),
            llm_api_key: None,
        }
    }
}

/// Raw file shape: every key optional so defaults can fill gaps.
#[derive(Debug, Default, Deserialize, Serialize)]
struct ConfigFile {
    alpha: Option<f64>,
    beta: Option<f64>,
    top_k: Option<usize>,
    detection_mode: Option<DetectionMode>,
    context_window_threshold: Option<u64>,
    embedding_dimension: Option<usize>,
    llm_base_url: Option<String>,
    embed_base_url: Option<String>,
    cache_dir: Option<String>,
}

/// Loads a config file (when given), applies defaults, then environment
/// overrides, and validates the result.
pub fn load_config(path: Option<&Path>, env: &BTreeMap<String, String>) -> Result<PipelineConfig> {
    let file: ConfigFile = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::missing_file(format!("config file {}", p.display()))
                } else {
                    Error::io_at(p, &e)
                }
            })?;
            toml::from_str(&text)
                .map_err(|e| Error::parse(format!("config file {}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };

    let defaults = PipelineConfig::default();
    let mut cfg = PipelineConfig {
        alpha: file.alpha.unwrap_or(defaults.alpha),
        beta: file.beta.unwrap_or(defaults.beta),
        top_k: file.top_k.unwrap_or(defaults.top_k),
        detection_mode: file.detection_mode.unwrap_or(defaults.detection_mode),
        context_window_threshold: file
            .context_window_threshold
            .unwrap_or(defaults.context_window_threshold),
        embedding_dimension: file.embedding_dimension.unwrap_or(defaults.embedding_dimension),
        llm_base_url: file.llm_base_url.unwrap_or(defaults.llm_base_url),
        embed_base_url: file.embed_base_url.unwrap_or(defaults.embed_base_url),
        cache_dir: file.cache_dir.map(PathBuf::from).unwrap_or(defaults.cache_dir),
        llm_api_key: None,
    };

    if let Some(v) = env.get(ENV_LLM_BASE_URL) {
        cfg.llm_base_url = v.clone();
    }
    if let Some(v) = env.get(ENV_EMBED_BASE_URL) {
        cfg.embed_base_url = v.clone();
    }
    if let Some(v) = env.get(ENV_CACHE_DIR) {
        cfg.cache_dir = PathBuf::from(v);
    }
    if let Some(v) = env.get(ENV_LLM_API_KEY) {
        if !v.is_empty() {
            cfg.llm_api_key = Some(v.clone());
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::validation(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::validation("alpha + beta must be > 0"));
        }
        if self.top_k < 1 {
            return Err(Error::validation("top_k must be >= 1"));
        }
        if self.context_window_threshold < 1 {
            return Err(Error::validation("context_window_threshold must be >= 1"));
        }
        if self.embedding_dimension < 1 {
            return Err(Error::validation("embedding_dimension must be >= 1"));
        }
        Ok(())
    }

    /// Writes the fully expanded config back out as a flat TOML document.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ConfigFile {
            alpha: Some(self.alpha),
            beta: Some(self.beta),
            top_k: Some(self.top_k),
            detection_mode: Some(self.detection_mode),
            context_window_threshold: Some(self.context_window_threshold),
            embedding_dimension: Some(self.embedding_dimension),
            llm_base_url: Some(self.llm_base_url.clone()),
            embed_base_url: Some(self.embed_base_url.clone()),
            cache_dir: Some(self.cache_dir.to_string_lossy().into_owned()),
        };
        let text = toml::to_string(&file)
            .map_err(|e| Error::new(ErrorKind::Internal, format!("config serialize: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io_at(path, &e))
    }

    /// Content hash over everything that affects pipeline behavior.
    /// The API key is deliberately excluded.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        crate::util::sha256_hex(canonical.as_bytes())
    }

    pub fn uses_mock_embedder(&self) -> bool {
        self.embed_base_url == EMBED_PROVIDER_MOCK
            || self.embed_base_url.starts_with("mock:")
    }
}
