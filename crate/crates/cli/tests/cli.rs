//! End-to-end tests that drive the compiled `grs` binary the way a user
//! would: real argv, real files, scripted mock servers for every model
//! endpoint. Exit codes and file outputs are the contract under test.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use grs_core::gateway::{serve_mock, LlmClient, MatchType, MockRule, MockScript, ModelEndpoint};

const BIN: &str = env!("CARGO_BIN_EXE_grs");

const CATALOG: &str = concat!(
    "{\"title\": \"中银创新医疗混合C\", \"attributes\": {\"risk\": \"中风险\", \"type\": \"混合型\"}, \"scenario\": \"fund\"}\n",
    "{\"title\": \"中银创新医疗混合A\", \"attributes\": {\"risk\": \"中风险\", \"type\": \"混合型\"}, \"scenario\": \"fund\"}\n",
    "{\"title\": \"华安医疗创新混合C\", \"attributes\": {\"risk\": \"中风险\", \"type\": \"混合型\"}, \"scenario\": \"fund\"}\n",
    "{\"title\": \"国泰金鹰增长混合\", \"attributes\": {\"risk\": \"高风险\", \"type\": \"混合型\"}, \"scenario\": \"fund\"}\n",
    "{\"title\": \"华夏成长混合\", \"attributes\": {\"risk\": \"中风险\", \"type\": \"混合型\"}, \"scenario\": \"fund\"}\n",
);
const QUERIES: &str = concat!(
    "{\"query\": \"医疗混合\", \"frequency\": 120}\n",
    "{\"query\": \"创新医疗\", \"frequency\": 40}\n",
    "{\"query\": \"增长混合\", \"frequency\": 7}\n",
);
const POSITIVES: &str = "{\"query\": \"医疗混合\", \"doc_id\": \"中银创新医疗混合C\"}\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Catalog, query log, positives, and a two-query eval set on disk.
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("catalog.jsonl"), CATALOG).unwrap();
        std::fs::write(dir.path().join("queries.jsonl"), QUERIES).unwrap();
        std::fs::write(dir.path().join("positives.jsonl"), POSITIVES).unwrap();
        std::fs::write(
            dir.path().join("eval.jsonl"),
            concat!(
                "{\"query\": \"医疗混合\", \"labels\": {\"中银创新医疗混合C\": \"relevant\", \"中银创新医疗混合A\": \"relevant\", \"华安医疗创新混合C\": \"relevant\", \"国泰金鹰增长混合\": \"irrelevant\", \"华夏成长混合\": \"irrelevant\"}}\n",
                "{\"query\": \"增长混合\", \"labels\": {\"国泰金鹰增长混合\": \"relevant\", \"华夏成长混合\": \"relevant\", \"中银创新医疗混合C\": \"irrelevant\", \"中银创新医疗混合A\": \"irrelevant\", \"华安医疗创新混合C\": \"irrelevant\"}}\n",
            ),
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Write `config.json` with absolute paths and the given endpoints.
    fn write_config(&self, decision_url: &str, judge_url: &str, rate: f64) -> PathBuf {
        let endpoint = |name: &str, url: &str| {
            serde_json::json!({ "name": name, "base_url": url, "model_id": format!("{name}-model") })
        };
        let config = serde_json::json!({
            "seed": 7,
            "paths": {
                "catalog": self.path().join("catalog.jsonl"),
                "query_log": self.path().join("queries.jsonl"),
                "positives": self.path().join("positives.jsonl"),
                "output_dir": self.path().join("out"),
            },
            "endpoints": {
                "judges": [endpoint("judge_a", judge_url), endpoint("judge_b", judge_url)],
                "reasoning": endpoint("teacher", judge_url),
                "decision": endpoint("decision", decision_url),
            },
            "gr_backend": { "kind": "stub", "hallucination_rate": rate },
            "k": 3,
            "agent": { "perspectives": ["risk", "type"] },
            "workers": 4,
        });
        let path = self.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        path
    }
}

/// No server listens here; connections are refused immediately.
const DEAD: &str = "http://127.0.0.1:9";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process terminated by signal")
}

/// Judges always vote irrelevant; the teacher replies a fixed rationale.
fn judge_and_teacher_script() -> MockScript {
    MockScript {
        rules: vec![MockRule {
            match_type: MatchType::Substring,
            pattern: "please explain the reason".to_string(),
            reply: "标的属性与查询意图不符。".to_string(),
        }],
        default_reply: "IRRELEVANT".to_string(),
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let fx = Fixture::new();
    let config = fx.write_config(DEAD, DEAD, 0.0);
    let config = config.to_str().unwrap();

    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    // Missing subcommand, unknown subcommand, unknown flag: usage errors.
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["index", "--no-such-flag"])), 1);
    // Config problems are usage-class too.
    let missing = run(&["--config", "/no/such/config.json", "index"]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("cannot read"));
    let no_config = run(&["index"]);
    assert_eq!(code(&no_config), 1);
    assert!(stderr(&no_config).contains("--config is required"));
    // A well-formed config whose eval set is missing.
    let bad_eval = run(&["--config", config, "eval", "--eval-set", "/no/such.jsonl"]);
    assert_eq!(code(&bad_eval), 1);
    assert!(stderr(&bad_eval).contains("cannot load eval set"));
}

#[test]
fn duplicate_doc_id_is_named_in_the_diagnostic() {
    let fx = Fixture::new();
    let mut doubled = String::from(CATALOG);
    doubled.push_str("{\"title\": \"华夏成长混合\", \"attributes\": {}, \"scenario\": \"fund\"}\n");
    std::fs::write(fx.path().join("catalog.jsonl"), doubled).unwrap();
    let config = fx.write_config(DEAD, DEAD, 0.0);
    let output = run(&["--config", config.to_str().unwrap(), "config", "validate"]);
    assert_eq!(code(&output), 1);
    assert!(
        stderr(&output).contains("华夏成长混合"),
        "diagnostic must name the offending DocID: {}",
        stderr(&output)
    );
}

#[test]
fn config_validate_summarizes_a_good_config() {
    let fx = Fixture::new();
    let config = fx.write_config(DEAD, DEAD, 0.0);
    let output = run(&["--config", config.to_str().unwrap(), "config", "validate"]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("config OK"));
    assert!(text.contains("5 documents"));
    assert!(text.contains("risk, type"));
}

#[test]
fn index_prints_stats_and_dumps_postings() {
    let fx = Fixture::new();
    let config = fx.write_config(DEAD, DEAD, 0.0);
    let config = config.to_str().unwrap();
    let output = run(&["--config", config, "index"]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("num_docs: 5"));

    let output = run(&["--config", config, "index", "--dump"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    let dump_lines: Vec<&str> = text.lines().filter(|l| l.starts_with('{')).collect();
    assert!(!dump_lines.is_empty());
    // Every document title contains the bigram 混合, so its postings list
    // covers the whole catalog.
    let line = dump_lines
        .iter()
        .find(|l| l.contains("\"term\":\"混合\""))
        .expect("the 混合 bigram must be indexed");
    let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(parsed["postings"].as_array().unwrap().len(), 5);
}

#[test]
fn relative_config_paths_resolve_against_the_config_file() {
    let fx = Fixture::new();
    let config = serde_json::json!({
        "seed": 7,
        "paths": {
            "catalog": "catalog.jsonl",
            "query_log": "queries.jsonl",
            "positives": "positives.jsonl",
            "output_dir": "out",
        },
        "endpoints": {
            "judges": [{ "name": "j", "base_url": DEAD, "model_id": "j" }],
            "reasoning": { "name": "r", "base_url": DEAD, "model_id": "r" },
            "decision": { "name": "d", "base_url": DEAD, "model_id": "d" },
        },
        "gr_backend": { "kind": "stub", "hallucination_rate": 0.0 },
        "agent": { "perspectives": ["risk"] },
    });
    let config_path = fx.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    // Run from an unrelated working directory.
    let elsewhere = tempfile::tempdir().unwrap();
    let output = Command::new(BIN)
        .current_dir(elsewhere.path())
        .args(["--config", config_path.to_str().unwrap(), "index"])
        .output()
        .unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("num_docs: 5"));
}

#[test]
fn agent_filters_through_the_decision_endpoint() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let decision = rt
        .block_on(serve_mock(
            0,
            MockScript::constant("中银创新医疗混合C\n中银创新医疗混合A\n华安医疗创新混合C"),
        ))
        .unwrap();
    let config = fx.write_config(&decision.base_url(), DEAD, 0.0);
    let config = config.to_str().unwrap();

    let output = run(&["--config", config, "agent", "--query", "医疗混合"]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let text = stdout(&output);
    for title in ["中银创新医疗混合C", "中银创新医疗混合A", "华安医疗创新混合C"] {
        assert!(text.contains(title), "missing {title} in: {text}");
    }

    let output = run(&["--config", config, "agent", "--query", "医疗混合", "--trace"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("\"perspectives\""), "trace JSON present: {text}");
    rt.block_on(decision.stop());
}

#[test]
fn bypass_needs_no_decision_endpoint_and_follows_ranking() {
    let fx = Fixture::new();
    // Decision endpoint unreachable on purpose: the bypass never calls it.
    let config = fx.write_config(DEAD, DEAD, 0.0);
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "agent",
        "--query",
        "医疗混合",
        "--no-agent",
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let text = stdout(&output);
    // With no perturbation the bypass output is the BM25 ranking: the two
    // 中银 titles tie and break by DocID, 华安 follows.
    let expect = [
        "  1. 中银创新医疗混合A",
        "  2. 中银创新医疗混合C",
        "  3. 华安医疗创新混合C",
    ];
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(&lines[1..4], &expect, "full output: {text}");
}

#[test]
fn same_seed_reruns_are_identical() {
    let fx = Fixture::new();
    let config = fx.write_config(DEAD, DEAD, 0.5);
    let args = [
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "123",
        "agent",
        "--query",
        "医疗混合",
        "--no-agent",
    ];
    let first = run(&args);
    let second = run(&args);
    assert_eq!(code(&first), 0);
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn distill_writes_corpus_and_stats_deterministically() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let model = rt.block_on(serve_mock(0, judge_and_teacher_script())).unwrap();
    let config = fx.write_config(DEAD, &model.base_url(), 0.0);
    let config = config.to_str().unwrap();

    let out1 = fx.path().join("run1");
    let out2 = fx.path().join("run2");
    for out in [&out1, &out2] {
        let output = run(&["--config", config, "--output", out.to_str().unwrap(), "distill"]);
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        let text = stdout(&output);
        assert!(text.contains("corpus:"), "{text}");
    }
    let corpus1 = std::fs::read(out1.join("corpus.jsonl")).unwrap();
    let corpus2 = std::fs::read(out2.join("corpus.jsonl")).unwrap();
    assert!(!corpus1.is_empty());
    assert_eq!(corpus1, corpus2, "same seed and scripts, same bytes");

    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("distill_stats.json")).unwrap())
            .unwrap();
    let base = stats["base_records"].as_u64().unwrap();
    let reasoning = stats["reasoning_records"].as_u64().unwrap();
    assert_eq!(stats["corpus_records"].as_u64().unwrap(), base + reasoning);
    // Both judges vote on every candidate pair.
    let calls = &stats["stats"]["judge_calls"];
    assert_eq!(calls["judge_a"], calls["judge_b"]);
    rt.block_on(model.stop());
}

#[test]
fn eval_writes_single_sweep_and_ablation_reports() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let decision = rt
        .block_on(serve_mock(
            0,
            MockScript::constant("中银创新医疗混合C\n中银创新医疗混合A\n华安医疗创新混合C"),
        ))
        .unwrap();
    let config = fx.write_config(&decision.base_url(), DEAD, 0.0);
    let config = config.to_str().unwrap();
    let eval_set = fx.path().join("eval.jsonl");
    let eval_set = eval_set.to_str().unwrap();

    let single = run(&["--config", config, "eval", "--eval-set", eval_set]);
    assert_eq!(code(&single), 0, "stderr: {}", stderr(&single));
    assert!(stdout(&single).contains("system"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path().join("out/eval_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["system"], "full");
    assert!(report["acc"].is_number());

    let sweep = run(&[
        "--config", config, "eval", "--eval-set", eval_set, "--sweep", "--ks", "1,2,3",
    ]);
    assert_eq!(code(&sweep), 0, "stderr: {}", stderr(&sweep));
    let points: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.path().join("out/sweep.json")).unwrap())
            .unwrap();
    assert_eq!(points.as_array().unwrap().len(), 3);

    let ablate = run(&["--config", config, "eval", "--eval-set", eval_set, "--ablate"]);
    assert_eq!(code(&ablate), 0, "stderr: {}", stderr(&ablate));
    let text = stdout(&ablate);
    for system in ["full", "no_reasoning", "no_agent"] {
        assert!(text.contains(system), "missing {system} row: {text}");
    }
    let variants: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fx.path().join("out/ablation.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(variants.as_array().unwrap().len(), 3);
    rt.block_on(decision.stop());
}

#[test]
fn undefined_metric_is_a_runtime_failure() {
    let fx = Fixture::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let decision = rt
        .block_on(serve_mock(0, MockScript::constant("中银创新医疗混合C")))
        .unwrap();
    let config = fx.write_config(&decision.base_url(), DEAD, 0.0);
    // The single label never appears in any output, so nothing is judged.
    let uncovered = fx.path().join("uncovered.jsonl");
    std::fs::write(
        &uncovered,
        "{\"query\": \"医疗混合\", \"labels\": {\"华夏成长混合\": \"relevant\"}}\n",
    )
    .unwrap();
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "eval",
        "--eval-set",
        uncovered.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("undefined"));
    rt.block_on(decision.stop());
}

#[test]
fn mock_serve_round_trips_a_scripted_reply() {
    let fx = Fixture::new();
    let script = MockScript::constant("scripted reply");
    std::fs::write(
        fx.path().join("script.json"),
        serde_json::to_string(&script).unwrap(),
    )
    .unwrap();
    let mut child = Command::new(BIN)
        .args([
            "mock-serve",
            "--mock-script",
            fx.path().join("script.json").to_str().unwrap(),
            "--port",
            "0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    // The URL line is printed once the listener is bound.
    let mut line = String::new();
    std::io::BufReader::new(child.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(url.starts_with("http://127.0.0.1:"), "line: {line}");

    let rt = tokio::runtime::Runtime::new().unwrap();
    let client = LlmClient::new(ModelEndpoint::new("probe", &url, "probe-model"));
    let reply = rt.block_on(client.complete("any prompt")).unwrap();
    assert_eq!(reply, "scripted reply");
    child.kill().unwrap();
    child.wait().unwrap();
}
