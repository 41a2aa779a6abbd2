//! Thin typed client for the scanner service.
//!
//! The service is stateless: every request carries the fully resolved run
//! options (config snapshot, provider mode, model profile, knobs) plus the
//! filesystem inputs/outputs of the operation, and the server executes it
//! against its own filesystem. Responses and errors reuse the core types
//! verbatim, so a remote run behaves exactly like an in-process one — in
//! particular, error kinds cross the wire and map to the same exit codes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use srr_core::agents::DetectionFinding;
use srr_core::config::PipelineConfig;
use srr_core::error::{Error, Result};
use srr_core::kb::{EnrichedCweRecord, KbProvenance};
use srr_core::llm::ModelProfile;
use srr_core::pipeline::{BenchOutput, EvalOutput, KbBuildOutput, ScanRunOutput};
use srr_core::provider::ProviderMode;
use srr_core::retrieval::FieldCombiner;

/// Fully resolved per-run settings, shipped with every operation request.
/// The LLM API key is deliberately absent: the serving process injects its
/// own credential from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub config: PipelineConfig,
    pub llm_mode: ProviderMode,
    pub model: ModelProfile,
    pub combiner: FieldCombiner,
    pub jobs: usize,
    pub frozen_time: bool,
    /// Directory holding the four prompt template files; embedded defaults
    /// when absent.
    pub prompts_dir: Option<PathBuf>,
    /// Signature lexicon file; embedded default lexicon when absent.
    pub lexicon_path: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            config: PipelineConfig::default(),
            llm_mode: ProviderMode::default(),
            model: ModelProfile::new("generic-chat-model", 128_000)
                .expect("static profile is valid"),
            combiner: FieldCombiner::default(),
            jobs: 1,
            frozen_time: false,
            prompts_dir: None,
            lexicon_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbBuildRequest {
    pub options: RunOptions,
    pub raw_path: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbInspectRequest {
    pub kb_dir: PathBuf,
    /// When present, return this record; otherwise just the KB header.
    pub cwe_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbInspectResponse {
    pub record_count: usize,
    pub embedding_dimension: usize,
    pub provenance: KbProvenance,
    pub record: Option<EnrichedCweRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub options: RunOptions,
    pub kb_dir: PathBuf,
    pub design_paths: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub options: RunOptions,
    pub kb_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub options: RunOptions,
    pub dataset_dir: PathBuf,
    pub findings_path: PathBuf,
    /// Optional retrieval traces for T1/T5/T10; without them hit counts are
    /// zero (appropriate for baselines produced without retrieval).
    pub retrieval_path: Option<PathBuf>,
    /// Optional baseline findings for a before/after comparison.
    pub compare_findings_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

/// Findings-file helper shared by CLI and server: the on-disk format is a
/// plain JSON array of findings.
pub fn parse_findings_json(text: &str, what: &str) -> Result<Vec<DetectionFinding>> {
    serde_json::from_str(text)
        .map_err(|e| Error::schema(format!("{what} is not a findings array: {e}")))
}

/// Async HTTP client for the service.
#[derive(Debug, Clone)]
pub struct ApiClient {
    base_url: String,
    http: reqwest::Client,
}

impl ApiClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(600))
            .build()
            .expect("reqwest client construction cannot fail with static options");
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        request: &Req,
    ) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        let response = self
            .http
            .post(&url)
            .json(request)
            .send()
            .await
            .map_err(|e| Error::provider(format!("service request to {url} failed: {e}")))?;
        Self::decode(response).await
    }

    /// On success decodes the typed payload; on failure reconstructs the
    /// service-side error (kind included) so callers see the original fault.
    async fn decode<Resp: for<'de> Deserialize<'de>>(
        response: reqwest::Response,
    ) -> Result<Resp> {
        let status = response.status();
        let body = response
            .bytes()
            .await
            .map_err(|e| Error::provider(format!("reading service response failed: {e}")))?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| {
                Error::provider(format!("service returned an undecodable payload: {e}"))
            });
        }
        match serde_json::from_slice::<Error>(&body) {
            Ok(err) => Err(err),
            Err(_) => Err(Error::provider(format!(
                "service returned {status}: {}",
                String::from_utf8_lossy(&body)
            ))),
        }
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/healthz", self.base_url);
        let response = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|e| Error::provider(format!("service request to {url} failed: {e}")))?;
        Self::decode(response).await
    }

    pub async fn kb_build(&self, request: &KbBuildRequest) -> Result<KbBuildOutput> {
        self.post("/v1/kb/build", request).await
    }

    pub async fn kb_inspect(&self, request: &KbInspectRequest) -> Result<KbInspectResponse> {
        self.post("/v1/kb/inspect", request).await
    }

    pub async fn scan(&self, request: &ScanRequest) -> Result<ScanRunOutput> {
        self.post("/v1/scan", request).await
    }

    pub async fn bench(&self, request: &BenchRequest) -> Result<BenchOutput> {
        self.post("/v1/bench", request).await
    }

    pub async fn eval(&self, request: &EvalRequest) -> Result<EvalOutput> {
        self.post("/v1/eval", request).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_options_round_trip_without_credentials() {
        let mut options = RunOptions::default();
        options.config.llm_api_key = Some("secret".into());
        let json = serde_json::to_string(&options).unwrap();
        assert!(!json.contains("secret"), "API keys must never cross the wire");
        let back: RunOptions = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config.llm_api_key, None);
        assert_eq!(back.model, options.model);
    }

    #[test]
    fn findings_parser_reports_schema_errors() {
        assert!(parse_findings_json("[]", "x").unwrap().is_empty());
        let err = parse_findings_json("{\"not\": \"an array\"}", "findings.json").unwrap_err();
        assert_eq!(err.kind, srr_core::error::ErrorKind::Schema);
        assert!(err.message.contains("findings.json"));
    }
}
