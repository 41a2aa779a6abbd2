//! `srr` — RTL CWE scanner command line.
//!
//! Every pipeline command is a client of the HTTP service: by default the
//! CLI spins the service up in-process on a loopback port and drives it
//! through the typed client, and `--server URL` points the same commands at
//! a remote instance instead. `serve` and `stub-provider` run the service
//! and the offline provider as long-lived processes.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use srr_client::{
    ApiClient, BenchRequest, EvalRequest, KbBuildRequest, KbInspectRequest, RunOptions,
    ScanRequest,
};
use srr_core::agents::Verdict;
use srr_core::config::{load_config, DetectionMode};
use srr_core::error::{Error, Result};
use srr_core::llm::ModelProfile;
use srr_core::provider::ProviderMode;
use srr_core::retrieval::FieldCombiner;

fn parse_llm_mode(s: &str) -> std::result::Result<ProviderMode, String> {
    s.parse().map_err(|e: Error| e.message)
}

fn parse_detection_mode(s: &str) -> std::result::Result<DetectionMode, String> {
    s.parse().map_err(|e: Error| e.message)
}

fn parse_combiner(s: &str) -> std::result::Result<FieldCombiner, String> {
    s.parse().map_err(|e: Error| e.message)
}

#[derive(Debug, Parser)]
#[command(
    name = "srr",
    version,
    about = "Retrieval-augmented CWE scanning for RTL designs",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// LLM provider mode.
    #[arg(long, global = true, value_name = "MODE", value_parser = parse_llm_mode, default_value = "replay")]
    llm: ProviderMode,

    /// Provider response cache directory (overrides config/env).
    #[arg(long, global = true, value_name = "PATH")]
    cache_dir: Option<PathBuf>,

    /// Concurrent cases/designs in flight.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,

    /// CWEs retrieved per design (overrides config).
    #[arg(long, global = true, value_name = "K")]
    top_k: Option<usize>,

    /// Detection mode: iterative, batch, or auto (overrides config).
    #[arg(long, global = true, value_name = "MODE", value_parser = parse_detection_mode)]
    mode: Option<DetectionMode>,

    /// Freeze timestamps and durations for reproducible artifacts.
    #[arg(long, global = true)]
    frozen_time: bool,

    /// Chat model name recorded in requests and manifests.
    #[arg(long, global = true, value_name = "NAME", default_value = "generic-chat-model")]
    model: String,

    /// Model context window in tokens (drives auto mode and chunking).
    #[arg(long, global = true, value_name = "TOKENS", default_value_t = 128_000)]
    context_window: u64,

    /// Retrieval field combiner: max or mean.
    #[arg(long, global = true, value_name = "COMBINER", value_parser = parse_combiner, default_value = "max")]
    combiner: FieldCombiner,

    /// Directory with prompt template overrides (all four files).
    #[arg(long, global = true, value_name = "DIR")]
    prompts: Option<PathBuf>,

    /// Signature keyword lexicon file.
    #[arg(long, global = true, value_name = "PATH")]
    lexicon: Option<PathBuf>,

    /// Drive a remote service instead of the in-process one.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Knowledge-base operations.
    #[command(subcommand)]
    Kb(KbCommand),

    /// Scan HDL design files against a knowledge base.
    Scan {
        /// Knowledge-base directory (from `kb build`).
        #[arg(long, value_name = "DIR")]
        kb: PathBuf,
        /// Output directory for findings and the run manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// HDL design files; each file stem becomes the design id.
        #[arg(required = true, value_name = "DESIGN.v")]
        designs: Vec<PathBuf>,
    },

    /// Run a benchmark dataset end to end and score it.
    Bench {
        #[arg(long, value_name = "DIR")]
        kb: PathBuf,
        /// Dataset root: one directory per case.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Score pre-existing findings against a dataset.
    Eval {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// findings.json produced by scan or bench.
        #[arg(long, value_name = "PATH")]
        findings: PathBuf,
        /// retrieval.json traces for T1/T5/T10 (optional).
        #[arg(long, value_name = "PATH")]
        retrieval: Option<PathBuf>,
        /// Baseline findings for a before/after comparison.
        #[arg(long, value_name = "PATH")]
        compare: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Run the HTTP service.
    Serve {
        #[arg(long, value_name = "ADDR", default_value = "127.0.0.1:8373")]
        addr: SocketAddr,
    },

    /// Run the deterministic offline chat/embedding provider.
    StubProvider {
        #[arg(long, value_name = "ADDR", default_value = "127.0.0.1:8374")]
        addr: SocketAddr,
        /// Embedding dimension served by /embed.
        #[arg(long, value_name = "N", default_value_t = 768)]
        dimension: usize,
    },
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Enrich raw CWE entries and build the searchable knowledge base.
    Build {
        /// Raw CWE entries (JSON array).
        #[arg(long, value_name = "PATH")]
        raw: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Show a knowledge base's header, or dump one enriched record.
    Inspect {
        #[arg(long, value_name = "DIR")]
        kb: PathBuf,
        /// Dump this record (e.g. CWE-1234) instead of just the header.
        #[arg(long, value_name = "ID")]
        cwe: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime construction cannot fail");
    match runtime.block_on(run(cli)) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn build_options(globals: &GlobalArgs) -> Result<RunOptions> {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    let mut config = load_config(globals.config.as_deref(), &env)?;
    if let Some(dir) = &globals.cache_dir {
        config.cache_dir = dir.clone();
    }
    if let Some(k) = globals.top_k {
        config.top_k = k;
    }
    if let Some(mode) = globals.mode {
        config.detection_mode = mode;
    }
    config.validate()?;
    Ok(RunOptions {
        config,
        llm_mode: globals.llm,
        model: ModelProfile::new(globals.model.clone(), globals.context_window)?,
        combiner: globals.combiner,
        jobs: globals.jobs.max(1),
        frozen_time: globals.frozen_time,
        prompts_dir: globals.prompts.clone(),
        lexicon_path: globals.lexicon.clone(),
    })
}

/// Remote client when `--server` is given; otherwise an in-process service
/// on an ephemeral loopback port.
async fn client_for(globals: &GlobalArgs) -> Result<ApiClient> {
    match &globals.server {
        Some(url) => Ok(ApiClient::new(url.clone())),
        None => {
            let (addr, _handle) = srr_server::spawn_ephemeral().await?;
            Ok(ApiClient::new(format!("http://{addr}")))
        }
    }
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { addr } => {
            eprintln!("service listening on http://{addr}");
            return srr_server::serve(addr).await;
        }
        Command::StubProvider { addr, dimension } => {
            eprintln!("stub provider listening on http://{addr} (dimension {dimension})");
            return srr_server::stub::serve_stub(addr, dimension).await;
        }
        _ => {}
    }

    let options = build_options(&cli.globals)?;
    let client = client_for(&cli.globals).await?;

    match cli.command {
        Command::Kb(KbCommand::Build { raw, out }) => {
            let built = client
                .kb_build(&KbBuildRequest { options, raw_path: raw, out_dir: out.clone() })
                .await?;
            println!(
                "knowledge base built: {} records, embedding dimension {} -> {}",
                built.record_count,
                built.embedding_dimension,
                out.display()
            );
            println!(
                "provider calls: {} chat ({} cached), {} embed ({} cached)",
                built.llm_counters.live_calls,
                built.llm_counters.cache_hits,
                built.embed_counters.live_calls,
                built.embed_counters.cache_hits,
            );
        }
        Command::Kb(KbCommand::Inspect { kb, cwe }) => {
            let info = client.kb_inspect(&KbInspectRequest { kb_dir: kb, cwe_id: cwe }).await?;
            println!(
                "records: {}  dimension: {}  enriched by: {}  embedded by: {}  built at: {}",
                info.record_count,
                info.embedding_dimension,
                info.provenance.enrichment_model,
                info.provenance.embedding_provider,
                info.provenance.built_at,
            );
            if let Some(record) = info.record {
                let json = serde_json::to_string_pretty(&record)
                    .map_err(|e| Error::internal(format!("record serialize: {e}")))?;
                println!("{json}");
            }
        }
        Command::Scan { kb, out, designs } => {
            let run = client
                .scan(&ScanRequest {
                    options,
                    kb_dir: kb,
                    design_paths: designs,
                    out_dir: out.clone(),
                })
                .await?;
            for output in &run.outputs {
                let found: Vec<_> = output
                    .findings
                    .iter()
                    .filter(|f| f.verdict == Verdict::Found)
                    .collect();
                println!(
                    "{}: {} candidate CWEs analyzed ({} mode), {} found",
                    output.design_id,
                    output.findings.len(),
                    output.mode.used,
                    found.len()
                );
                for finding in found {
                    let confirmed = match finding.snippet_in_source {
                        Some(true) => "snippet verified in source",
                        Some(false) => "snippet NOT present in source",
                        None => "no snippet",
                    };
                    println!(
                        "  rank {:>2}  {}  ({confirmed})",
                        finding.retrieval_rank, finding.cwe_id
                    );
                }
            }
            for (design, error) in &run.failures {
                eprintln!("warning: {design} failed: {error}");
            }
            println!("artifacts: {}", out.display());
        }
        Command::Bench { kb, dataset, out } => {
            let bench = client
                .bench(&BenchRequest {
                    options,
                    kb_dir: kb,
                    dataset_dir: dataset,
                    out_dir: out.clone(),
                })
                .await?;
            print!("{}", bench.report.render_markdown());
            for (case, error) in &bench.manifest.failures {
                eprintln!("warning: {case} failed: {error}");
            }
            println!("artifacts: {}", out.display());
        }
        Command::Eval { dataset, findings, retrieval, compare, out } => {
            let eval = client
                .eval(&EvalRequest {
                    options,
                    dataset_dir: dataset,
                    findings_path: findings,
                    retrieval_path: retrieval,
                    compare_findings_path: compare,
                    out_dir: out.clone(),
                })
                .await?;
            print!("{}", eval.report.render_markdown());
            if let Some(comparison) = &eval.comparison {
                print!("{}", comparison.render_markdown());
            }
            println!("artifacts: {}", out.display());
        }
        Command::Serve { .. } | Command::StubProvider { .. } => unreachable!("handled above"),
    }
    Ok(())
}
