//! End-to-end service tests: a stub provider and the real service on
//! ephemeral ports, driven through the typed client.

use std::path::Path;

use srr_client::{
    ApiClient, BenchRequest, EvalRequest, KbBuildRequest, KbInspectRequest, RunOptions,
    ScanRequest,
};
use srr_core::error::ErrorKind;
use srr_core::llm::ModelProfile;
use srr_core::provider::ProviderMode;

const SAMPLE_CWE_JSON: &str =
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cwe_hw_sample.json");

async fn stub_backed_options(cache_dir: &Path) -> RunOptions {
    let (stub_addr, _stub) = srr_server::stub::spawn_stub(256).await.unwrap();
    let base = format!("http://{stub_addr}");
    let mut options = RunOptions {
        llm_mode: ProviderMode::Record,
        model: ModelProfile::new("stub-chat", 120_000).unwrap(),
        jobs: 2,
        frozen_time: true,
        ..RunOptions::default()
    };
    options.config.llm_base_url = base.clone();
    options.config.embed_base_url = base;
    options.config.embedding_dimension = 256;
    options.config.cache_dir = cache_dir.to_path_buf();
    options
}

fn write_case(root: &Path, id: &str, cwe: &str, design: &str, gold: &str) {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("design.v"), design).unwrap();
    std::fs::write(dir.join("gold_snippet.v"), gold).unwrap();
    std::fs::write(
        dir.join("meta.json"),
        format!(r#"{{"case_id":"{id}","gold_cwe_id":"{cwe}","description":"test case"}}"#),
    )
    .unwrap();
}

/// Three cases: two whose identifiers trip the stub detector for their gold
/// CWE, one clean design the stub reports NOT_FOUND on.
fn write_dataset(root: &Path) {
    write_case(
        root,
        "case_debug",
        "CWE-1191",
        "module soc_dbg(input clk);\n  wire jtag_tck;\n  reg debug_en;\n  always @(posedge clk) debug_en <= 1'b1;\nendmodule\n",
        "always @(posedge clk) debug_en <= 1'b1;\n",
    );
    write_case(
        root,
        "case_lock",
        "CWE-1231",
        "module cfg_lock(input clk, input wr);\n  reg lock_bit;\n  always @(posedge clk) if (wr) lock_bit <= 1'b0;\nendmodule\n",
        "always @(posedge clk) if (wr) lock_bit <= 1'b0;\n",
    );
    write_case(
        root,
        "case_clean",
        "CWE-1244",
        "module adder(input [3:0] a, input [3:0] b, output [4:0] y);\n  assign y = a + b;\nendmodule\n",
        "assign y = a + b;\n",
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn full_pipeline_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let options = stub_backed_options(&tmp.path().join("cache")).await;

    let (addr, _server) = srr_server::spawn_ephemeral().await.unwrap();
    let client = ApiClient::new(format!("http://{addr}"));

    let health = client.health().await.unwrap();
    assert_eq!(health.status, "ok");

    // Knowledge base build against the stub provider.
    let kb_dir = tmp.path().join("kb");
    let built = client
        .kb_build(&KbBuildRequest {
            options: options.clone(),
            raw_path: SAMPLE_CWE_JSON.into(),
            out_dir: kb_dir.clone(),
        })
        .await
        .unwrap();
    assert_eq!(built.record_count, 12);
    assert_eq!(built.embedding_dimension, 256);
    assert!(kb_dir.join("manifest.json").is_file());
    assert!(kb_dir.join("records.jsonl").is_file());

    // Inspect: header, one record, and a miss (kind survives the wire).
    let header = client
        .kb_inspect(&KbInspectRequest { kb_dir: kb_dir.clone(), cwe_id: None })
        .await
        .unwrap();
    assert_eq!(header.record_count, 12);
    assert!(header.record.is_none());

    let one = client
        .kb_inspect(&KbInspectRequest {
            kb_dir: kb_dir.clone(),
            cwe_id: Some("CWE-1191".into()),
        })
        .await
        .unwrap();
    let record = one.record.unwrap();
    assert_eq!(record.cwe_id, "CWE-1191");
    assert!(!record.summary.is_empty());
    assert!(!record.keywords.is_empty());

    let miss = client
        .kb_inspect(&KbInspectRequest {
            kb_dir: kb_dir.clone(),
            cwe_id: Some("CWE-9999".into()),
        })
        .await
        .unwrap_err();
    assert_eq!(miss.kind, ErrorKind::MissingFile);
    assert!(miss.message.contains("CWE-9999"));

    // Scan one design.
    let design_path = tmp.path().join("soc_dbg.v");
    std::fs::write(
        &design_path,
        "module soc_dbg(input clk);\n  wire jtag_tck;\n  reg debug_en;\nendmodule\n",
    )
    .unwrap();
    let scan_out_dir = tmp.path().join("scan_out");
    let scan = client
        .scan(&ScanRequest {
            options: options.clone(),
            kb_dir: kb_dir.clone(),
            design_paths: vec![design_path],
            out_dir: scan_out_dir.clone(),
        })
        .await
        .unwrap();
    assert_eq!(scan.outputs.len(), 1);
    assert_eq!(scan.outputs[0].design_id, "soc_dbg");
    assert!(!scan.outputs[0].findings.is_empty());
    assert!(scan.outputs[0].signature.keywords.contains(&"jtag".to_string()));
    assert!(scan_out_dir.join("findings.json").is_file());
    assert!(scan_out_dir.join("run_manifest.json").is_file());

    // Bench over the three-case dataset: the stub detects the two designs
    // whose identifiers match their gold CWE keywords.
    let dataset_dir = tmp.path().join("dataset");
    write_dataset(&dataset_dir);
    let bench_out = tmp.path().join("bench_out");
    let bench = client
        .bench(&BenchRequest {
            options: options.clone(),
            kb_dir: kb_dir.clone(),
            dataset_dir: dataset_dir.clone(),
            out_dir: bench_out.clone(),
        })
        .await
        .unwrap();
    assert_eq!(bench.report.case_count, 3);
    assert_eq!(bench.report.detected_count, 2);
    assert_eq!(bench.report.detection_accuracy_percent, "66.67%");
    let by_id = |id: &str| bench.report.per_case.iter().find(|c| c.case_id == id).unwrap();
    assert!(by_id("case_debug").detected);
    assert!(by_id("case_lock").detected);
    assert!(!by_id("case_clean").detected);
    assert!(by_id("case_debug").matched_cwe_rank.is_some());

    // Eval over the bench artifacts reproduces the bench report's scoring,
    // and a baseline comparison renders.
    let eval_out = tmp.path().join("eval_out");
    let eval = client
        .eval(&EvalRequest {
            options: options.clone(),
            dataset_dir: dataset_dir.clone(),
            findings_path: bench_out.join("findings.json"),
            retrieval_path: Some(bench_out.join("retrieval.json")),
            compare_findings_path: Some(bench_out.join("findings.json")),
            out_dir: eval_out.clone(),
        })
        .await
        .unwrap();
    assert_eq!(eval.report.detection_accuracy_percent, "66.67%");
    assert_eq!(eval.report.retrieval_hits, bench.report.retrieval_hits);
    let comparison = eval.comparison.unwrap();
    // The "baseline" is the same findings scored without retrieval traces.
    assert_eq!(comparison.before.detected_count, comparison.after.detected_count);
    assert_eq!(comparison.before.retrieval_hits.t10, 0);
    assert!(eval_out.join("comparison.md").is_file());

    // Replay from the same cache is byte-identical and needs no provider.
    // The config stays identical (the report embeds its hash); only the
    // provider mode flips, and replay never dials the endpoints.
    let mut replay_options = options.clone();
    replay_options.llm_mode = ProviderMode::Replay;
    let replay_out = tmp.path().join("bench_replay");
    let replay = client
        .bench(&BenchRequest {
            options: replay_options,
            kb_dir,
            dataset_dir,
            out_dir: replay_out.clone(),
        })
        .await
        .unwrap();
    assert_eq!(replay.manifest.llm_counters.live_calls, 0);
    assert_eq!(replay.manifest.embed_counters.live_calls, 0);
    assert_eq!(
        std::fs::read(bench_out.join("report.json")).unwrap(),
        std::fs::read(replay_out.join("report.json")).unwrap(),
        "replayed report.json must be byte-identical"
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_inputs_surface_typed_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (addr, _server) = srr_server::spawn_ephemeral().await.unwrap();
    let client = ApiClient::new(format!("http://{addr}"));

    let mut options = RunOptions::default();
    options.config.cache_dir = tmp.path().join("cache");
    options.config.llm_base_url = "http://127.0.0.1:9".into();
    options.llm_mode = ProviderMode::Record;

    let err = client
        .kb_build(&KbBuildRequest {
            options: options.clone(),
            raw_path: tmp.path().join("no_such.json"),
            out_dir: tmp.path().join("kb"),
        })
        .await
        .unwrap_err();
    assert_eq!(err.kind, ErrorKind::MissingFile);

    let err = client
        .bench(&BenchRequest {
            options: options.clone(),
            kb_dir: tmp.path().join("no_kb"),
            dataset_dir: tmp.path().join("no_dataset"),
            out_dir: tmp.path().join("out"),
        })
        .await
        .unwrap_err();
    assert_eq!(err.kind, ErrorKind::MissingFile);

    // Passthrough without a credential is a config fault, mapped end-to-end.
    let mut passthrough = options.clone();
    passthrough.llm_mode = ProviderMode::Passthrough;
    let err = client
        .scan(&ScanRequest {
            options: passthrough,
            kb_dir: tmp.path().join("no_kb"),
            design_paths: vec![],
            out_dir: tmp.path().join("out"),
        })
        .await
        .unwrap_err();
    assert_eq!(err.kind, ErrorKind::Config);
    assert!(err.message.contains("SRR_LLM_API_KEY"));
}
