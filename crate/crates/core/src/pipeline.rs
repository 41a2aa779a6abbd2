//! End-to-end orchestration: knowledge-base construction, design scans, and
//! benchmark runs, shared by the HTTP service and the command-line client.
//!
//! Every run writes its artifacts plus a `run_manifest.json` whose `run_id`
//! is a content hash over the configuration and produced artifacts —
//! replaying an identical run yields the identical id. Wall-clock data is
//! routed through [`Clock`] so frozen-time runs are byte-reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::agents::{detect, DetectionFinding, ModeReport, PromptSet, Summarizer};
use crate::config::{PipelineConfig, EMBED_PROVIDER_MOCK, ENV_LLM_API_KEY};
use crate::embedding::Embedder;
use crate::error::{Error, ErrorKind, Result};
use crate::evaluation::{
    score_case, ComparisonReport, EvaluationReport, PerCaseRecord, ReportMetadata,
};
use crate::hdl::{extract_signature, SignatureLexicon};
use crate::kb::{self, CweKnowledgeBase, EnrichedCweRecord};
use crate::llm::{LlmClient, ModelProfile};
use crate::model::{BenchmarkCase, HardwareSignature, RtlDesign};
use crate::provider::{CounterSnapshot, ProviderMode};
use crate::retrieval::{compose_query, retrieve_top_k, FieldCombiner, RetrievalResult};
use crate::util::sha256_hex;

pub const FINDINGS_FILE: &str = "findings.json";
pub const RETRIEVAL_FILE: &str = "retrieval.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_MD_FILE: &str = "report.md";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Timestamp/duration source. `Frozen` pins timestamps to the epoch and all
/// durations to zero so repeated runs serialize identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Frozen,
}

impl Clock {
    pub fn now_iso(&self) -> String {
        match self {
            Clock::Frozen => "1970-01-01T00:00:00Z".to_string(),
            Clock::System => {
                chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            }
        }
    }

    pub fn elapsed_ms(&self, started: Instant) -> u64 {
        match self {
            Clock::Frozen => 0,
            Clock::System => started.elapsed().as_millis() as u64,
        }
    }
}

/// Everything a pipeline stage needs: validated config plus shared provider
/// handles. Cloning is cheap (the handles are `Arc`s).
#[derive(Clone)]
pub struct PipelineContext {
    pub config: PipelineConfig,
    pub profile: ModelProfile,
    pub llm: Arc<LlmClient>,
    pub embedder: Arc<Embedder>,
    pub prompts: Arc<PromptSet>,
    pub lexicon: Arc<SignatureLexicon>,
    pub combiner: FieldCombiner,
    pub jobs: usize,
    pub clock: Clock,
}

impl PipelineContext {
    /// Wires providers from the config. Credential and endpoint requirements
    /// depend on the provider mode: replay never touches the network, so it
    /// needs neither; passthrough always does, so it needs both.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        config: PipelineConfig,
        profile: ModelProfile,
        llm_mode: ProviderMode,
        prompts: Arc<PromptSet>,
        lexicon: Arc<SignatureLexicon>,
        combiner: FieldCombiner,
        jobs: usize,
        clock: Clock,
    ) -> Result<Self> {
        if llm_mode == ProviderMode::Passthrough && config.llm_api_key.is_none() {
            return Err(Error::config(format!(
                "{ENV_LLM_API_KEY} must be set when the LLM provider mode is passthrough"
            )));
        }
        if llm_mode != ProviderMode::Replay && config.llm_base_url.trim().is_empty() {
            return Err(Error::config(format!(
                "llm_base_url (or SRR_LLM_BASE_URL) must be set in {llm_mode} mode"
            )));
        }
        let llm = LlmClient::new(
            config.llm_base_url.clone(),
            config.llm_api_key.clone(),
            llm_mode,
            &config.cache_dir,
        );
        let embedder = if config.embed_base_url == EMBED_PROVIDER_MOCK {
            Embedder::hashing(config.embedding_dimension)
        } else {
            Embedder::http(
                config.embed_base_url.clone(),
                config.embedding_dimension,
                llm_mode,
                &config.cache_dir,
            )
        };
        Ok(Self {
            config,
            profile,
            llm,
            embedder,
            prompts,
            lexicon,
            combiner,
            jobs: jobs.max(1),
            clock,
        })
    }

    pub fn llm_mode(&self) -> ProviderMode {
        self.llm.mode()
    }

    fn summarizer(&self) -> Summarizer {
        Summarizer::new(self.llm.clone(), self.profile.clone(), self.prompts.clone())
    }

    fn config_hash(&self) -> String {
        let body = serde_json::to_vec(&self.config).expect("config serialization is infallible");
        sha256_hex(&body)
    }

    fn report_metadata(&self, kb: &CweKnowledgeBase) -> ReportMetadata {
        ReportMetadata {
            detection_model: self.profile.model_name.clone(),
            enrichment_model: kb.provenance.enrichment_model.clone(),
            embedding_provider: kb.provenance.embedding_provider.clone(),
            detection_mode: self.config.detection_mode.to_string(),
            field_combiner: self.combiner.to_string(),
            top_k: self.config.top_k,
            config_hash: self.config_hash(),
            generated_at: self.clock.now_iso(),
        }
    }
}

/// Provenance record written next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Content hash over the config snapshot, provider mode, and artifact
    /// bytes. Identical replayed runs share the id; timings never enter it.
    pub run_id: String,
    pub command: String,
    pub generated_at: String,
    pub llm_mode: String,
    pub embedding_provider: String,
    pub config: PipelineConfig,
    pub model: ModelProfile,
    pub field_combiner: String,
    pub jobs: usize,
    /// Per-design detection mode actually used, with fallback reasons.
    pub detection_modes: BTreeMap<String, ModeReport>,
    /// Designs/cases that failed outright, with the error text.
    pub failures: BTreeMap<String, String>,
    pub stage_timings_ms: BTreeMap<String, u64>,
    pub llm_counters: CounterSnapshot,
    pub embed_counters: CounterSnapshot,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Serializes `value` as pretty JSON (stable field order) into `dir/name`.
/// Returns the sha256 of the written bytes for run-id derivation.
fn write_json_artifact<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::internal(format!("artifact {name} serialization: {e}")))?
        + "\n";
    write_text_artifact(dir, name, &body)
}

fn write_text_artifact(dir: &Path, name: &str, body: &str) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, &e))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io_at(&path, &e))?;
    Ok(sha256_hex(body.as_bytes()))
}

/// Derives the content-hash run id from the config snapshot, provider mode,
/// and the artifacts' content hashes (in artifact-name order).
fn derive_run_id(
    command: &str,
    config_hash: &str,
    llm_mode: ProviderMode,
    artifact_hashes: &BTreeMap<String, String>,
) -> String {
    let material = serde_json::json!({
        "command": command,
        "config": config_hash,
        "llm_mode": llm_mode.to_string(),
        "artifacts": artifact_hashes,
    });
    sha256_hex(material.to_string().as_bytes())
}

// ---------------------------------------------------------------------------
// Knowledge-base construction
// ---------------------------------------------------------------------------

/// `kb build` outcome summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbBuildOutput {
    pub kb_dir: PathBuf,
    pub record_count: usize,
    pub embedding_dimension: usize,
    pub stage_timings_ms: BTreeMap<String, u64>,
    pub llm_counters: CounterSnapshot,
    pub embed_counters: CounterSnapshot,
}

/// Builds the enriched, embedded knowledge base from a raw CWE export and
/// persists it into `out_dir`. Enrichment runs up to `jobs` entries
/// concurrently; record identity and ordering are preserved regardless.
pub async fn kb_build(
    ctx: &PipelineContext,
    raw_path: &Path,
    out_dir: &Path,
) -> Result<KbBuildOutput> {
    let mut timings = BTreeMap::new();

    let started = Instant::now();
    let entries = kb::ingest_raw(raw_path)?;
    if entries.is_empty() {
        return Err(Error::new(
            ErrorKind::EmptyDataset,
            format!("raw CWE input {} contains no entries", raw_path.display()),
        ));
    }
    timings.insert("ingest".to_string(), ctx.clock.elapsed_ms(started));

    let started = Instant::now();
    let summarizer = ctx.summarizer();
    // Materialized for the same auto-trait reason as in `scan_designs`.
    let enrich_futures: Vec<_> =
        entries.iter().map(|entry| kb::enrich(entry, &summarizer)).collect();
    let enriched: Vec<EnrichedCweRecord> = stream::iter(enrich_futures)
        .buffered(ctx.jobs)
        .collect::<Vec<Result<EnrichedCweRecord>>>()
        .await
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    timings.insert("enrich".to_string(), ctx.clock.elapsed_ms(started));

    let started = Instant::now();
    let built_at = ctx.clock.now_iso();
    let knowledge_base =
        kb::embed_records(enriched, &ctx.embedder, &ctx.profile.model_name, &built_at).await?;
    timings.insert("embed".to_string(), ctx.clock.elapsed_ms(started));

    let started = Instant::now();
    kb::save_kb(&knowledge_base, out_dir)?;
    timings.insert("save".to_string(), ctx.clock.elapsed_ms(started));

    Ok(KbBuildOutput {
        kb_dir: out_dir.to_path_buf(),
        record_count: knowledge_base.len(),
        embedding_dimension: knowledge_base.embedding_dimension,
        stage_timings_ms: timings,
        llm_counters: ctx.llm.counters(),
        embed_counters: ctx.embedder.counters(),
    })
}

// ---------------------------------------------------------------------------
// Design scanning
// ---------------------------------------------------------------------------

/// Full trace of one design's pass through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutput {
    pub design_id: String,
    pub summary: String,
    pub signature: HardwareSignature,
    pub retrieval: RetrievalResult,
    pub findings: Vec<DetectionFinding>,
    pub mode: ModeReport,
}

/// Retrieval trace row as persisted in `retrieval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRetrieval {
    pub case_id: String,
    pub retrieval: RetrievalResult,
}

/// Runs summarize → signature → weighted query → top-k retrieval → detection
/// for one design. Provider failures inside detection degrade to
/// indeterminate findings; failures before that point abort the scan.
pub async fn scan_design(
    ctx: &PipelineContext,
    knowledge_base: &CweKnowledgeBase,
    design: &RtlDesign,
) -> Result<ScanOutput> {
    let summary = ctx.summarizer().summarize(design).await?;
    let signature = extract_signature(design, &ctx.lexicon);

    let summary_emb = ctx.embedder.embed_text(&summary, "summary").await?;
    let signature_emb = if signature.is_empty() {
        None
    } else {
        Some(ctx.embedder.embed_text(&signature.joined(), "signature").await?)
    };
    let query =
        compose_query(&summary_emb, signature_emb.as_ref(), ctx.config.alpha, ctx.config.beta)?;

    let retrieval = retrieve_top_k(knowledge_base, &query, ctx.config.top_k, ctx.combiner)?;
    let outcome = detect(
        &ctx.llm,
        &ctx.profile,
        &ctx.prompts,
        design,
        &summary,
        &retrieval.ranked,
        knowledge_base,
        ctx.config.detection_mode,
        ctx.config.context_window_threshold,
    )
    .await?;

    Ok(ScanOutput {
        design_id: design.design_id.clone(),
        summary,
        signature,
        retrieval,
        findings: outcome.findings,
        mode: outcome.mode,
    })
}

/// `scan` command outcome across one or more designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRunOutput {
    pub outputs: Vec<ScanOutput>,
    /// design_id → error for designs that failed; success elsewhere keeps the
    /// run alive.
    pub failures: BTreeMap<String, String>,
    pub manifest: RunManifest,
}

/// Scans each design (up to `jobs` concurrently), then writes `findings.json`,
/// `retrieval.json`, and `run_manifest.json` into `out_dir`. Errors only when
/// no design completes.
pub async fn scan_designs(
    ctx: &PipelineContext,
    knowledge_base: &CweKnowledgeBase,
    designs: &[RtlDesign],
    out_dir: &Path,
) -> Result<ScanRunOutput> {
    if designs.is_empty() {
        return Err(Error::new(ErrorKind::EmptyDataset, "no designs to scan"));
    }
    let started = Instant::now();
    // Futures are materialized before streaming: a closure living inside the
    // stream adapters trips rustc's higher-ranked auto-trait inference when
    // this future is held across service handler boundaries.
    let scan_futures: Vec<_> = designs
        .iter()
        .map(|d| {
            let ctx = ctx.clone();
            async move { (d.design_id.clone(), scan_design(&ctx, knowledge_base, d).await) }
        })
        .collect();
    let results: Vec<(String, Result<ScanOutput>)> =
        stream::iter(scan_futures).buffered(ctx.jobs).collect().await;

    let mut outputs = Vec::new();
    let mut failures = BTreeMap::new();
    for (design_id, result) in results {
        match result {
            Ok(output) => outputs.push(output),
            Err(err) => {
                failures.insert(design_id, err.to_string());
            }
        }
    }
    if outputs.is_empty() {
        let first = failures.values().next().expect("at least one failure when none succeeded");
        return Err(Error::new(
            ErrorKind::EmptyDataset,
            format!("all {} designs failed; first error: {first}", designs.len()),
        ));
    }
    outputs.sort_by(|a, b| a.design_id.cmp(&b.design_id));
    let mut timings = BTreeMap::new();
    timings.insert("scan".to_string(), ctx.clock.elapsed_ms(started));

    let findings: Vec<&DetectionFinding> = outputs.iter().flat_map(|o| &o.findings).collect();
    let traces: Vec<CaseRetrieval> = outputs
        .iter()
        .map(|o| CaseRetrieval { case_id: o.design_id.clone(), retrieval: o.retrieval.clone() })
        .collect();
    let mut artifact_hashes = BTreeMap::new();
    artifact_hashes.insert(
        FINDINGS_FILE.to_string(),
        write_json_artifact(out_dir, FINDINGS_FILE, &findings)?,
    );
    artifact_hashes.insert(
        RETRIEVAL_FILE.to_string(),
        write_json_artifact(out_dir, RETRIEVAL_FILE, &traces)?,
    );

    let detection_modes =
        outputs.iter().map(|o| (o.design_id.clone(), o.mode.clone())).collect();
    let manifest = finish_manifest(
        ctx,
        "scan",
        detection_modes,
        failures.clone(),
        timings,
        artifact_hashes,
        out_dir,
    )?;
    Ok(ScanRunOutput { outputs, failures, manifest })
}

/// Builds the run manifest (computing the run id from artifact hashes),
/// writes it, and returns it.
fn finish_manifest(
    ctx: &PipelineContext,
    command: &str,
    detection_modes: BTreeMap<String, ModeReport>,
    failures: BTreeMap<String, String>,
    stage_timings_ms: BTreeMap<String, u64>,
    artifact_hashes: BTreeMap<String, String>,
    out_dir: &Path,
) -> Result<RunManifest> {
    let mut artifacts: Vec<String> = artifact_hashes.keys().cloned().collect();
    artifacts.push(RUN_MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        run_id: derive_run_id(command, &ctx.config_hash(), ctx.llm_mode(), &artifact_hashes),
        command: command.to_string(),
        generated_at: ctx.clock.now_iso(),
        llm_mode: ctx.llm_mode().to_string(),
        embedding_provider: ctx.embedder.provider_name().to_string(),
        config: ctx.config.clone(),
        model: ctx.profile.clone(),
        field_combiner: ctx.combiner.to_string(),
        jobs: ctx.jobs,
        detection_modes,
        failures,
        stage_timings_ms,
        llm_counters: ctx.llm.counters(),
        embed_counters: ctx.embedder.counters(),
        artifacts,
    };
    write_json_artifact(out_dir, RUN_MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Benchmark runs and evaluation
// ---------------------------------------------------------------------------

/// `bench` command outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub report: EvaluationReport,
    pub manifest: RunManifest,
    pub scans: Vec<ScanOutput>,
}

/// Scans every benchmark case, scores the findings, and writes
/// `findings.json`, `retrieval.json`, `report.json`, `report.md`, and
/// `run_manifest.json`. Per-case failures score as undetected and are
/// recorded in the manifest; the run errors only when every case fails.
pub async fn bench(
    ctx: &PipelineContext,
    knowledge_base: &CweKnowledgeBase,
    cases: &[BenchmarkCase],
    out_dir: &Path,
) -> Result<BenchOutput> {
    if cases.is_empty() {
        return Err(Error::new(ErrorKind::EmptyDataset, "benchmark dataset has no cases"));
    }
    let started = Instant::now();
    // Materialized for the same auto-trait reason as in `scan_designs`.
    let scan_futures: Vec<_> = cases
        .iter()
        .enumerate()
        .map(|(index, case)| {
            let ctx = ctx.clone();
            async move { (index, scan_design(&ctx, knowledge_base, &case.buggy_design).await) }
        })
        .collect();
    let results: Vec<(usize, Result<ScanOutput>)> =
        stream::iter(scan_futures).buffered(ctx.jobs).collect().await;
    let mut timings = BTreeMap::new();
    timings.insert("scan".to_string(), ctx.clock.elapsed_ms(started));

    let started = Instant::now();
    let mut per_case = Vec::with_capacity(cases.len());
    let mut scans = Vec::new();
    let mut failures = BTreeMap::new();
    let mut detection_modes = BTreeMap::new();
    for (index, result) in results {
        let case = &cases[index];
        match result {
            Ok(scan) => {
                per_case.push(score_case(case, &scan.findings, &scan.retrieval)?);
                detection_modes.insert(case.case_id.clone(), scan.mode.clone());
                scans.push(scan);
            }
            Err(err) => {
                failures.insert(case.case_id.clone(), err.to_string());
                per_case.push(PerCaseRecord {
                    case_id: case.case_id.clone(),
                    gold_cwe_id: case.gold_cwe_id.clone(),
                    detected: false,
                    matched_cwe_rank: None,
                    rouge: None,
                    other_found_cwe_ids: vec![],
                });
            }
        }
    }
    if failures.len() == cases.len() {
        let first = failures.values().next().expect("nonempty failures");
        return Err(Error::new(
            ErrorKind::EmptyDataset,
            format!("all {} cases failed; first error: {first}", cases.len()),
        ));
    }
    scans.sort_by(|a, b| a.design_id.cmp(&b.design_id));

    let report = EvaluationReport::assemble(per_case, ctx.report_metadata(knowledge_base))?;
    timings.insert("score".to_string(), ctx.clock.elapsed_ms(started));

    let findings: Vec<&DetectionFinding> = scans.iter().flat_map(|s| &s.findings).collect();
    let traces: Vec<CaseRetrieval> = scans
        .iter()
        .map(|s| CaseRetrieval { case_id: s.design_id.clone(), retrieval: s.retrieval.clone() })
        .collect();
    let mut artifact_hashes = BTreeMap::new();
    artifact_hashes.insert(
        FINDINGS_FILE.to_string(),
        write_json_artifact(out_dir, FINDINGS_FILE, &findings)?,
    );
    artifact_hashes.insert(
        RETRIEVAL_FILE.to_string(),
        write_json_artifact(out_dir, RETRIEVAL_FILE, &traces)?,
    );
    artifact_hashes.insert(
        REPORT_JSON_FILE.to_string(),
        write_json_artifact(out_dir, REPORT_JSON_FILE, &report)?,
    );
    artifact_hashes.insert(
        REPORT_MD_FILE.to_string(),
        write_text_artifact(out_dir, REPORT_MD_FILE, &report.render_markdown())?,
    );

    let manifest =
        finish_manifest(ctx, "bench", detection_modes, failures, timings, artifact_hashes, out_dir)?;
    Ok(BenchOutput { report, manifest, scans })
}

/// Scores pre-existing findings against a dataset (the `eval` command).
/// Retrieval traces are optional: without them, retrieval ranks are unknown
/// and T1/T5/T10 are zero — appropriate for baselines produced without
/// retrieval.
pub fn evaluate_findings(
    cases: &[BenchmarkCase],
    findings: &[DetectionFinding],
    traces: Option<&[CaseRetrieval]>,
    metadata: ReportMetadata,
) -> Result<EvaluationReport> {
    if cases.is_empty() {
        return Err(Error::new(ErrorKind::EmptyDataset, "benchmark dataset has no cases"));
    }
    let by_case: BTreeMap<&str, &RetrievalResult> = traces
        .unwrap_or(&[])
        .iter()
        .map(|t| (t.case_id.as_str(), &t.retrieval))
        .collect();
    let empty = RetrievalResult::default();
    let mut per_case = Vec::with_capacity(cases.len());
    for case in cases {
        let case_findings: Vec<DetectionFinding> = findings
            .iter()
            .filter(|f| f.design_id == case.buggy_design.design_id)
            .cloned()
            .collect();
        let retrieval = by_case.get(case.case_id.as_str()).copied().unwrap_or(&empty);
        per_case.push(score_case(case, &case_findings, retrieval)?);
    }
    EvaluationReport::assemble(per_case, metadata)
}

pub const COMPARISON_JSON_FILE: &str = "comparison.json";
pub const COMPARISON_MD_FILE: &str = "comparison.md";

/// `eval` command outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvaluationReport,
    /// Present when baseline findings were supplied for a before/after view.
    pub comparison: Option<ComparisonReport>,
    pub artifacts: Vec<String>,
}

/// Scores pre-existing findings, optionally against a baseline findings set
/// (scored without retrieval traces), and writes the report artifacts.
pub fn eval_run(
    cases: &[BenchmarkCase],
    findings: &[DetectionFinding],
    traces: Option<&[CaseRetrieval]>,
    baseline_findings: Option<&[DetectionFinding]>,
    metadata: ReportMetadata,
    out_dir: &Path,
) -> Result<EvalOutput> {
    let report = evaluate_findings(cases, findings, traces, metadata.clone())?;
    write_json_artifact(out_dir, REPORT_JSON_FILE, &report)?;
    write_text_artifact(out_dir, REPORT_MD_FILE, &report.render_markdown())?;
    let mut artifacts = vec![REPORT_JSON_FILE.to_string(), REPORT_MD_FILE.to_string()];
    let comparison = match baseline_findings {
        Some(baseline) => {
            let before = evaluate_findings(cases, baseline, None, metadata)?;
            let comparison = ComparisonReport::new(before, report.clone())?;
            write_json_artifact(out_dir, COMPARISON_JSON_FILE, &comparison)?;
            write_text_artifact(out_dir, COMPARISON_MD_FILE, &comparison.render_markdown())?;
            artifacts.push(COMPARISON_JSON_FILE.to_string());
            artifacts.push(COMPARISON_MD_FILE.to_string());
            Some(comparison)
        }
        None => None,
    };
    Ok(EvalOutput { report, comparison, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Verdict;

    #[test]
    fn frozen_clock_is_constant() {
        let clock = Clock::Frozen;
        assert_eq!(clock.now_iso(), "1970-01-01T00:00:00Z");
        assert_eq!(clock.elapsed_ms(Instant::now()), 0);
        let live = Clock::System.now_iso();
        assert!(live.starts_with("20"), "system clock renders RFC 3339, got {live}");
    }

    #[test]
    fn run_id_depends_on_artifacts_and_config_but_not_timings() {
        let mut hashes = BTreeMap::new();
        hashes.insert("findings.json".to_string(), "aaaa".to_string());
        let a = derive_run_id("bench", "cfg1", ProviderMode::Replay, &hashes);
        let b = derive_run_id("bench", "cfg1", ProviderMode::Replay, &hashes);
        assert_eq!(a, b);
        assert_ne!(a, derive_run_id("scan", "cfg1", ProviderMode::Replay, &hashes));
        assert_ne!(a, derive_run_id("bench", "cfg2", ProviderMode::Replay, &hashes));
        assert_ne!(a, derive_run_id("bench", "cfg1", ProviderMode::Record, &hashes));
        hashes.insert("report.json".to_string(), "bbbb".to_string());
        assert_ne!(a, derive_run_id("bench", "cfg1", ProviderMode::Replay, &hashes));
    }

    #[test]
    fn passthrough_requires_api_key_and_live_modes_require_endpoint() {
        let config = PipelineConfig { llm_base_url: "http://127.0.0.1:1".into(), ..Default::default() };
        let err = PipelineContext::build(
            config.clone(),
            ModelProfile::new("m", 1000).unwrap(),
            ProviderMode::Passthrough,
            Arc::new(PromptSet::default()),
            Arc::new(SignatureLexicon::default()),
            FieldCombiner::Max,
            1,
            Clock::Frozen,
        )
        .err()
        .unwrap();
        assert_eq!(err.kind, ErrorKind::Config);
        assert!(err.to_string().contains("SRR_LLM_API_KEY"));

        let config = PipelineConfig { llm_base_url: String::new(), ..Default::default() };
        let err = PipelineContext::build(
            config,
            ModelProfile::new("m", 1000).unwrap(),
            ProviderMode::Record,
            Arc::new(PromptSet::default()),
            Arc::new(SignatureLexicon::default()),
            FieldCombiner::Max,
            1,
            Clock::Frozen,
        )
        .err()
        .unwrap();
        assert_eq!(err.kind, ErrorKind::Config);

        // Replay needs neither endpoint nor key.
        let config = PipelineConfig::default();
        assert!(PipelineContext::build(
            config,
            ModelProfile::new("m", 1000).unwrap(),
            ProviderMode::Replay,
            Arc::new(PromptSet::default()),
            Arc::new(SignatureLexicon::default()),
            FieldCombiner::Max,
            0,
            Clock::Frozen,
        )
        .is_ok());
    }

    #[test]
    fn evaluate_findings_joins_by_design_and_tolerates_missing_traces() {
        let case = BenchmarkCase {
            case_id: "case_a".to_string(),
            buggy_design: RtlDesign::new("case_a", "module m; endmodule\n").unwrap(),
            gold_snippet: "assign x = 1;".to_string(),
            fixed_design: None,
            gold_cwe_id: "CWE-1234".to_string(),
            description: String::new(),
        };
        let findings = vec![DetectionFinding {
            design_id: "case_a".to_string(),
            cwe_id: "CWE-1234".to_string(),
            verdict: Verdict::Found,
            snippet: "assign x = 1;".to_string(),
            rationale: "r".to_string(),
            raw_response: String::new(),
            retrieval_rank: 1,
            snippet_in_source: Some(true),
        }];
        let report =
            evaluate_findings(&[case], &findings, None, ReportMetadata::default()).unwrap();
        assert_eq!(report.detected_count, 1);
        assert_eq!(report.per_case[0].matched_cwe_rank, None);
        assert_eq!(report.retrieval_hits, crate::evaluation::RetrievalHits::default());
        assert_eq!(report.per_case[0].rouge.unwrap().f_lcs, 1.0);
    }

    #[test]
    fn evaluate_findings_rejects_empty_dataset() {
        let err =
            evaluate_findings(&[], &[], None, ReportMetadata::default()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::EmptyDataset);
    }
}
