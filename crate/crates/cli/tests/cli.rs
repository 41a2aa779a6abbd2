//! End-to-end tests of the `srr` binary: exit codes, command surface, the
//! full pipeline against a local stub provider, and `--server` remote mode.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use srr_core::kb::{save_kb, test_support};

const BIN: &str = env!("CARGO_BIN_EXE_srr");
const SAMPLE_CWE_JSON: &str =
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cwe_hw_sample.json");

/// Base command with provider environment cleared so tests are hermetic.
fn srr() -> Command {
    let mut cmd = Command::new(BIN);
    for var in ["SRR_LLM_API_KEY", "SRR_LLM_BASE_URL", "SRR_EMBED_BASE_URL", "SRR_CACHE_DIR"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).output().expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}\nstdout: {}\nstderr: {}",
        stdout_of(output),
        stderr_of(output)
    );
}

/// Kills the child process when the test ends, pass or fail.
struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_for_port(port: u16) {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return;
        }
        assert!(Instant::now() < deadline, "port {port} never came up");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn write_case(root: &Path, case_id: &str, gold_cwe: &str, design: &str, gold_snippet: &str) {
    let dir = root.join(case_id);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("design.v"), design).unwrap();
    std::fs::write(dir.join("gold_snippet.v"), gold_snippet).unwrap();
    std::fs::write(dir.join("fixed.v"), design).unwrap();
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "case_id": case_id,
            "gold_cwe_id": gold_cwe,
            "description": "cli test case"
        }))
        .unwrap(),
    )
    .unwrap();
}

/// Three cases whose designs trip the stub's keyword heuristics for exactly
/// two of the three gold CWEs.
fn write_dataset(root: &Path) {
    write_case(
        root,
        "case_debug",
        "CWE-1191",
        "module dbg_unit(input wire jtag_tck, input wire debug_en, output reg [7:0] dbg_data);\n  always @(posedge jtag_tck) begin\n    if (debug_en) dbg_data <= 8'hFF;\n  end\nendmodule\n",
        "if (debug_en) dbg_data <= 8'hFF;\n",
    );
    write_case(
        root,
        "case_lock",
        "CWE-1231",
        "module lock_reg(input wire clk, input wire wr_en, input wire [31:0] wdata, output reg lock_bit);\n  always @(posedge clk) begin\n    if (wr_en) lock_bit <= wdata[0];\n  end\nendmodule\n",
        "if (wr_en) lock_bit <= wdata[0];\n",
    );
    write_case(
        root,
        "case_clean",
        "CWE-1244",
        "module adder(input wire [7:0] a, input wire [7:0] b, output wire [8:0] sum);\n  assign sum = a + b;\nendmodule\n",
        "assign sum = a + b;\n",
    );
}

fn fixture_kb(dir: &Path) {
    let kb = test_support::kb(&[
        ("CWE-1191", &["jtag", "debug"]),
        ("CWE-1231", &["lock"]),
        ("CWE-1244", &["rom"]),
    ]);
    save_kb(&kb, dir).unwrap();
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn usage_errors_exit_2() {
    let no_args = run(&mut srr());
    assert_exit(&no_args, 2, "no arguments");

    let unknown = run(srr().arg("frobnicate"));
    assert_exit(&unknown, 2, "unknown subcommand");

    let bad_mode = run(srr().args(["scan", "--llm", "sideways", "--kb", "x", "design.v"]));
    assert_exit(&bad_mode, 2, "invalid provider mode");
    assert!(stderr_of(&bad_mode).contains("sideways"));
}

#[test]
fn missing_kb_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run(srr().args([
        "kb",
        "inspect",
        "--kb",
        tmp.path().join("nope").to_str().unwrap(),
    ]));
    assert_exit(&output, 2, "inspecting a missing knowledge base");
    assert!(stderr_of(&output).contains("error:"));
}

#[test]
fn missing_credentials_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.json");
    std::fs::write(&raw, "[]").unwrap();
    let out = tmp.path().join("kb");

    let record = run(srr().args([
        "kb",
        "build",
        "--llm",
        "record",
        "--raw",
        raw.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_exit(&record, 3, "record mode without an endpoint");
    assert!(stderr_of(&record).contains("SRR_LLM_BASE_URL"));

    let passthrough = run(srr().args([
        "kb",
        "build",
        "--llm",
        "passthrough",
        "--raw",
        raw.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_exit(&passthrough, 3, "passthrough mode without a credential");
    assert!(stderr_of(&passthrough).contains("SRR_LLM_API_KEY"));
}

#[test]
fn empty_dataset_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let kb_dir = tmp.path().join("kb");
    fixture_kb(&kb_dir);
    let dataset = tmp.path().join("dataset");
    std::fs::create_dir_all(&dataset).unwrap();

    let output = run(srr().args([
        "bench",
        "--llm",
        "replay",
        "--cache-dir",
        tmp.path().join("cache").to_str().unwrap(),
        "--kb",
        kb_dir.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]));
    assert_exit(&output, 4, "bench over an empty dataset");
}

#[test]
fn replay_cache_miss_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.json");
    std::fs::write(
        &raw,
        serde_json::to_string(&serde_json::json!([{
            "cwe_id": "CWE-1191",
            "title": "Debug port left open",
            "description": "The debug port is reachable in production."
        }]))
        .unwrap(),
    )
    .unwrap();

    let output = run(srr().args([
        "kb",
        "build",
        "--llm",
        "replay",
        "--cache-dir",
        tmp.path().join("fresh-cache").to_str().unwrap(),
        "--raw",
        raw.to_str().unwrap(),
        "--out",
        tmp.path().join("kb").to_str().unwrap(),
    ]));
    assert_exit(&output, 5, "replay with an empty cache");
    assert!(stderr_of(&output).to_lowercase().contains("cache"));
}

// ---------------------------------------------------------------------------
// Full pipeline against the stub provider
// ---------------------------------------------------------------------------

#[test]
fn full_pipeline_against_stub_provider() {
    let tmp = tempfile::tempdir().unwrap();
    let port = free_port();
    let _stub = ChildGuard(
        srr()
            .args(["stub-provider", "--addr", &format!("127.0.0.1:{port}"), "--dimension", "96"])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for_port(port);
    let base_url = format!("http://127.0.0.1:{port}");
    let cache = tmp.path().join("cache");
    let kb_dir = tmp.path().join("kb");
    let config = tmp.path().join("srr.toml");
    std::fs::write(&config, "embedding_dimension = 96\n").unwrap();

    // Common flags for every provider-backed invocation.
    let provider_cmd = || {
        let mut cmd = srr();
        cmd.arg("--config")
            .arg(&config)
            .env("SRR_LLM_BASE_URL", &base_url)
            .env("SRR_EMBED_BASE_URL", &base_url)
            .env("SRR_CACHE_DIR", &cache);
        cmd
    };

    let build = run(provider_cmd().args([
        "kb",
        "build",
        "--llm",
        "record",
        "--frozen-time",
        "--jobs",
        "4",
        "--raw",
        SAMPLE_CWE_JSON,
        "--out",
        kb_dir.to_str().unwrap(),
    ]));
    assert_exit(&build, 0, "kb build");
    let build_stdout = stdout_of(&build);
    assert!(
        build_stdout.contains("knowledge base built: 12 records, embedding dimension 96"),
        "unexpected build output: {build_stdout}"
    );

    let inspect = run(srr().args([
        "kb",
        "inspect",
        "--kb",
        kb_dir.to_str().unwrap(),
        "--cwe",
        "CWE-1191",
    ]));
    assert_exit(&inspect, 0, "kb inspect");
    let inspect_stdout = stdout_of(&inspect);
    assert!(inspect_stdout.contains("records: 12"), "{inspect_stdout}");
    assert!(inspect_stdout.contains("\"cwe_id\": \"CWE-1191\""), "{inspect_stdout}");

    let design = tmp.path().join("soc_dbg.v");
    std::fs::write(
        &design,
        "module soc_dbg(input wire jtag_tck, input wire debug_en, output reg lock_bit);\n  always @(posedge jtag_tck) begin\n    if (debug_en) lock_bit <= 1'b0;\n  end\nendmodule\n",
    )
    .unwrap();
    let scan_out = tmp.path().join("scan_out");
    let scan = run(provider_cmd().args([
        "scan",
        "--llm",
        "record",
        "--frozen-time",
        "--top-k",
        "12",
        "--kb",
        kb_dir.to_str().unwrap(),
        "--out",
        scan_out.to_str().unwrap(),
        design.to_str().unwrap(),
    ]));
    assert_exit(&scan, 0, "scan");
    let scan_stdout = stdout_of(&scan);
    assert!(scan_stdout.contains("CWE-1191"), "{scan_stdout}");
    assert!(scan_stdout.contains("snippet verified in source"), "{scan_stdout}");
    assert!(scan_out.join("findings.json").is_file());
    assert!(scan_out.join("run_manifest.json").is_file());

    let dataset = tmp.path().join("dataset");
    write_dataset(&dataset);
    let bench_out = tmp.path().join("bench_record");
    let bench = run(provider_cmd().args([
        "bench",
        "--llm",
        "record",
        "--frozen-time",
        "--top-k",
        "12",
        "--jobs",
        "2",
        "--kb",
        kb_dir.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        bench_out.to_str().unwrap(),
    ]));
    assert_exit(&bench, 0, "bench (record)");
    let bench_stdout = stdout_of(&bench);
    assert!(
        bench_stdout.contains("Detection accuracy: **66.67%** (2 of 3 cases)"),
        "{bench_stdout}"
    );

    // Replaying with the same flags (only the provider mode flips) must
    // reproduce report.json byte for byte, offline.
    let replay_out = tmp.path().join("bench_replay");
    let replay = run(provider_cmd().args([
        "bench",
        "--llm",
        "replay",
        "--frozen-time",
        "--top-k",
        "12",
        "--jobs",
        "2",
        "--kb",
        kb_dir.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        replay_out.to_str().unwrap(),
    ]));
    assert_exit(&replay, 0, "bench (replay)");
    let recorded = std::fs::read(bench_out.join("report.json")).unwrap();
    let replayed = std::fs::read(replay_out.join("report.json")).unwrap();
    assert_eq!(recorded, replayed, "replayed report.json differs from the recorded one");

    let eval_out = tmp.path().join("eval_out");
    let eval = run(srr().args([
        "eval",
        "--frozen-time",
        "--dataset",
        dataset.to_str().unwrap(),
        "--findings",
        bench_out.join("findings.json").to_str().unwrap(),
        "--retrieval",
        bench_out.join("retrieval.json").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]));
    assert_exit(&eval, 0, "eval");
    assert!(stdout_of(&eval).contains("66.67%"));
    assert!(eval_out.join("report.json").is_file());
}

// ---------------------------------------------------------------------------
// Remote service mode
// ---------------------------------------------------------------------------

#[test]
fn server_flag_targets_remote_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let port = free_port();
    let _server = ChildGuard(
        srr()
            .args(["serve", "--addr", &format!("127.0.0.1:{port}")])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for_port(port);
    let server_url = format!("http://127.0.0.1:{port}");

    let kb_dir = tmp.path().join("kb");
    fixture_kb(&kb_dir);
    let inspect = run(srr().args([
        "kb",
        "inspect",
        "--server",
        &server_url,
        "--kb",
        kb_dir.to_str().unwrap(),
        "--cwe",
        "CWE-1231",
    ]));
    assert_exit(&inspect, 0, "remote kb inspect");
    assert!(stdout_of(&inspect).contains("\"cwe_id\": \"CWE-1231\""));

    // Typed errors survive the HTTP hop: a missing path still exits 2.
    let missing: PathBuf = tmp.path().join("nope");
    let failure = run(srr().args([
        "kb",
        "inspect",
        "--server",
        &server_url,
        "--kb",
        missing.to_str().unwrap(),
    ]));
    assert_exit(&failure, 2, "remote inspect of a missing knowledge base");
}
