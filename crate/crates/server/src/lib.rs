//! HTTP service exposing the scanner pipeline.
//!
//! The service is stateless: each request carries fully resolved run options
//! plus filesystem paths, and the handler builds a fresh pipeline context,
//! executes the operation, and returns the core output type as JSON. Errors
//! cross the wire as the core error type (kind included), so clients
//! reconstruct the exact fault and exit-code mapping of an in-process run.
//!
//! The one thing that never crosses the wire is the LLM API key: the serving
//! process injects its own credential from the environment.

pub mod stub;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::task::JoinHandle;

use srr_client::{
    BenchRequest, EvalRequest, HealthResponse, KbBuildRequest, KbInspectRequest,
    KbInspectResponse, RunOptions, ScanRequest,
};
use srr_core::agents::PromptSet;
use srr_core::config::ENV_LLM_API_KEY;
use srr_core::error::{Error, ErrorKind, Result};
use srr_core::evaluation::ReportMetadata;
use srr_core::hdl::signature::SignatureLexicon;
use srr_core::kb::load_kb;
use srr_core::model::RtlDesign;
use srr_core::pipeline::{
    bench as run_bench, eval_run, kb_build as run_kb_build, scan_designs, BenchOutput, Clock,
    EvalOutput, KbBuildOutput, PipelineContext, ScanRunOutput,
};
use srr_core::util::sha256_hex;
use srr_core::{dataset, BenchmarkCase};

/// Error wrapper that serializes the core error as the response body, with a
/// status code chosen by kind. The status is cosmetic — clients key off the
/// serialized kind — but keeps the API well-behaved for generic HTTP tooling.
struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        Self(err)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::MissingFile => StatusCode::NOT_FOUND,
            ErrorKind::EmptyDataset => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Provider
            | ErrorKind::Timeout
            | ErrorKind::CacheMiss
            | ErrorKind::Embedding
            | ErrorKind::ContextOverflow
            | ErrorKind::Agent
            | ErrorKind::MalformedAgentOutput => StatusCode::BAD_GATEWAY,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// The service router.
pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/kb/build", post(kb_build_handler))
        .route("/v1/kb/inspect", post(kb_inspect_handler))
        .route("/v1/scan", post(scan_handler))
        .route("/v1/bench", post(bench_handler))
        .route("/v1/eval", post(eval_handler))
}

/// Binds an ephemeral localhost port and serves in a background task —
/// the in-process loopback used by the CLI and tests.
pub async fn spawn_ephemeral() -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| Error::io(format!("binding service listener: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::io(format!("reading service address: {e}")))?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, router()).await;
    });
    Ok((addr, handle))
}

/// Serves on a fixed address until the process exits.
pub async fn serve(addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("binding service to {addr}: {e}")))?;
    tracing::info!("serving on {addr}");
    axum::serve(listener, router())
        .await
        .map_err(|e| Error::io(format!("service server: {e}")))
}

/// Builds a pipeline context from wire options. The API key is taken from
/// this process's environment when the options carry none (they never do
/// after HTTP transport — the config skips the key when serializing).
pub fn build_context(options: &RunOptions) -> Result<PipelineContext> {
    let mut config = options.config.clone();
    if config.llm_api_key.is_none() {
        if let Ok(key) = std::env::var(ENV_LLM_API_KEY) {
            if !key.trim().is_empty() {
                config.llm_api_key = Some(key);
            }
        }
    }
    let prompts = match &options.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::default(),
    };
    let lexicon = match &options.lexicon_path {
        Some(path) => SignatureLexicon::from_file(path)?,
        None => SignatureLexicon::default(),
    };
    PipelineContext::build(
        config,
        options.model.clone(),
        options.llm_mode,
        Arc::new(prompts),
        Arc::new(lexicon),
        options.combiner,
        options.jobs,
        clock_for(options),
    )
}

fn clock_for(options: &RunOptions) -> Clock {
    if options.frozen_time {
        Clock::Frozen
    } else {
        Clock::System
    }
}

async fn healthz() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Runs pipeline work on a detached task. Besides isolating long operations
/// from the connection task, this keeps handler futures free of the deeply
/// nested stream-combinator future types the pipeline builds internally.
async fn run_detached<T, F>(fut: F) -> Result<T>
where
    F: std::future::Future<Output = Result<T>> + Send + 'static,
    T: Send + 'static,
{
    tokio::spawn(fut)
        .await
        .map_err(|e| Error::internal(format!("pipeline task failed: {e}")))?
}

async fn kb_build_handler(Json(request): Json<KbBuildRequest>) -> ApiResult<KbBuildOutput> {
    let ctx = build_context(&request.options)?;
    let output =
        run_detached(async move { run_kb_build(&ctx, &request.raw_path, &request.out_dir).await })
            .await?;
    Ok(Json(output))
}

async fn kb_inspect_handler(Json(request): Json<KbInspectRequest>) -> ApiResult<KbInspectResponse> {
    let kb = load_kb(&request.kb_dir)?;
    let record = match &request.cwe_id {
        Some(id) => Some(
            kb.get(id)
                .ok_or_else(|| {
                    Error::missing_file(format!("{id} is not in the knowledge base"))
                })?
                .clone(),
        ),
        None => None,
    };
    Ok(Json(KbInspectResponse {
        record_count: kb.len(),
        embedding_dimension: kb.embedding_dimension,
        provenance: kb.provenance.clone(),
        record,
    }))
}

async fn scan_handler(Json(request): Json<ScanRequest>) -> ApiResult<ScanRunOutput> {
    let ctx = build_context(&request.options)?;
    let kb = load_kb(&request.kb_dir)?;
    let mut designs = Vec::with_capacity(request.design_paths.len());
    let mut seen_ids = std::collections::BTreeSet::new();
    for path in &request.design_paths {
        let design = load_design(path)?;
        if !seen_ids.insert(design.design_id.clone()) {
            return Err(Error::validation(format!(
                "two design files share the id '{}'; rename one",
                design.design_id
            ))
            .into());
        }
        designs.push(design);
    }
    let out_dir = request.out_dir;
    let output =
        run_detached(async move { scan_designs(&ctx, &kb, &designs, &out_dir).await }).await?;
    Ok(Json(output))
}

async fn bench_handler(Json(request): Json<BenchRequest>) -> ApiResult<BenchOutput> {
    let ctx = build_context(&request.options)?;
    let kb = load_kb(&request.kb_dir)?;
    let cases = dataset::load_dataset(&request.dataset_dir)?;
    let out_dir = request.out_dir;
    let output =
        run_detached(async move { run_bench(&ctx, &kb, &cases, &out_dir).await }).await?;
    Ok(Json(output))
}

async fn eval_handler(Json(request): Json<EvalRequest>) -> ApiResult<EvalOutput> {
    let cases = dataset::load_dataset(&request.dataset_dir)?;
    let findings = read_findings(&request.findings_path)?;
    let traces: Option<Vec<srr_core::pipeline::CaseRetrieval>> = match &request.retrieval_path {
        Some(path) => {
            let text = read_text(path)?;
            Some(serde_json::from_str(&text).map_err(|e| {
                Error::schema(format!("{} is not a retrieval trace array: {e}", path.display()))
            })?)
        }
        None => None,
    };
    let baseline = match &request.compare_findings_path {
        Some(path) => Some(read_findings(path)?),
        None => None,
    };
    let metadata = eval_metadata(&request.options);
    let output = eval_run(
        &cases,
        &findings,
        traces.as_deref(),
        baseline.as_deref(),
        metadata,
        &request.out_dir,
    )?;
    Ok(Json(output))
}

/// Report metadata for scoring pre-existing findings: the enrichment and
/// embedding provenance lives with whatever run produced the findings, so
/// those fields say so instead of guessing.
fn eval_metadata(options: &RunOptions) -> ReportMetadata {
    let config_bytes =
        serde_json::to_vec(&options.config).expect("config serialization is infallible");
    ReportMetadata {
        detection_model: options.model.model_name.clone(),
        enrichment_model: "(external findings)".to_string(),
        embedding_provider: "(external findings)".to_string(),
        detection_mode: options.config.detection_mode.to_string(),
        field_combiner: options.combiner.to_string(),
        top_k: options.config.top_k,
        config_hash: sha256_hex(&config_bytes),
        generated_at: clock_for(options).now_iso(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::missing_file(format!("{}", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io_at(path, &e))
}

fn read_findings(path: &Path) -> Result<Vec<srr_core::agents::DetectionFinding>> {
    let text = read_text(path)?;
    srr_client::parse_findings_json(&text, &path.display().to_string())
}

/// Reads one HDL file as a design; the file stem becomes the design id.
fn load_design(path: &Path) -> Result<RtlDesign> {
    if !path.is_file() {
        return Err(Error::missing_file(format!("design file {}", path.display())));
    }
    let source = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, &e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RtlDesign::new(stem, source)
}

/// Loads a dataset for handlers and tests that need the typed cases.
pub fn load_cases(dataset_dir: &Path) -> Result<Vec<BenchmarkCase>> {
    dataset::load_dataset(dataset_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_stable_statuses() {
        let cases = [
            (Error::missing_file("x"), StatusCode::NOT_FOUND),
            (Error::new(ErrorKind::EmptyDataset, "x"), StatusCode::UNPROCESSABLE_ENTITY),
            (Error::provider("x"), StatusCode::BAD_GATEWAY),
            (Error::new(ErrorKind::CacheMiss, "x"), StatusCode::BAD_GATEWAY),
            (Error::io("x"), StatusCode::INTERNAL_SERVER_ERROR),
            (Error::parse("x"), StatusCode::BAD_REQUEST),
            (Error::config("x"), StatusCode::BAD_REQUEST),
            (Error::validation("x"), StatusCode::BAD_REQUEST),
        ];
        for (err, want) in cases {
            let response = ApiError(err).into_response();
            assert_eq!(response.status(), want);
        }
    }

    #[test]
    fn build_context_respects_frozen_time_and_defaults() {
        let options = RunOptions {
            frozen_time: true,
            ..RunOptions::default()
        };
        // Replay mode (the default) needs no endpoint or key.
        let ctx = build_context(&options).unwrap();
        assert_eq!(ctx.clock.now_iso(), "1970-01-01T00:00:00Z");
        assert_eq!(ctx.jobs, 1);
    }

    #[test]
    fn build_context_loads_prompt_and_lexicon_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let missing = RunOptions {
            prompts_dir: Some(dir.path().join("nope")),
            ..RunOptions::default()
        };
        assert_eq!(build_context(&missing).err().unwrap().kind, ErrorKind::MissingFile);

        let lex = dir.path().join("lex.txt");
        std::fs::write(&lex, "jtag: jtag,tck\n").unwrap();
        let options = RunOptions { lexicon_path: Some(lex), ..RunOptions::default() };
        let ctx = build_context(&options).unwrap();
        assert_eq!(ctx.lexicon.len(), 1);
    }
}
