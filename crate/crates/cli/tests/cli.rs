use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twrnnt"))
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn twrnnt")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "twrnnt {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON error line: {stderr}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen-data", "--out-dir", s(&data), "--seed", "3", "--n-train", "16", "--n-validation", "8", "--n-test", "8",
        "--n-pretrain", "12",
    ]);
    data
}

#[test]
fn loss_check_fixture_matches_enumeration() {
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(manifest("fixtures/t3u2.expected.json")).unwrap()).unwrap();
    let stdout = ok(&["loss-check", "--lattice", s(&manifest("fixtures/t3u2.json")), "--json"]);
    let got: Value = serde_json::from_str(&stdout).unwrap();
    let close = |a: &Value, b: &Value| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-10;
    assert!(close(&got["loss"], &expected["loss"]));
    assert!(close(&got["oracle"]["loss"], &expected["loss"]));
    assert!(close(&got["final_blank_logp"], &expected["final_blank_logp"]));
    assert_eq!(got["oracle"]["paths"], expected["paths"]);
    for (g, e) in got["conditionals"].as_array().unwrap().iter().zip(expected["conditionals"].as_array().unwrap()) {
        assert!(close(g, e));
    }
    assert!(got["oracle"]["loss_abs_diff"].as_f64().unwrap() < 1e-10);
}

#[test]
fn loss_check_text_output_and_config_file() {
    let stdout = ok(&["loss-check", "--config", s(&manifest("configs/loss-check.toml"))]);
    assert!(stdout.contains("loss               5.8012170738"), "{stdout}");
    assert!(stdout.contains("oracle_loss        5.8012170738"), "{stdout}");
}

#[test]
fn committed_configs_parse() {
    for entry in std::fs::read_dir(manifest("configs")).unwrap() {
        let path = entry.unwrap().path();
        let sub = path.file_stem().unwrap().to_str().unwrap().to_string();
        // Relative input paths do not resolve from an empty directory, so most
        // subcommands stop at path validation; only gen-data does real work.
        let cwd = tempfile::tempdir().unwrap();
        let out = bin().current_dir(cwd.path()).args([sub.as_str(), "--config", s(&path)]).output().unwrap();
        if out.status.success() {
            continue;
        }
        let err = error_line(&out);
        let msg = err["error"]["message"].as_str().unwrap();
        assert!(!msg.contains("unknown field"), "{sub}: {msg}");
    }
}

#[test]
fn corrupt_at_zero_only_changes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let input = data.join("train.jsonl");
    let output = dir.path().join("e.jsonl");
    ok(&["corrupt", "--error-rate", "0", "--in", s(&input), "--out", s(&output)]);
    let a = std::fs::read_to_string(&input).unwrap();
    let b = std::fs::read_to_string(&output).unwrap();
    let (a_head, a_body) = a.split_once('\n').unwrap();
    let (b_head, b_body) = b.split_once('\n').unwrap();
    assert_eq!(a_body, b_body);
    assert_ne!(a_head, b_head);
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let (a, b) = (small_data(&a), small_data(&b));
    for split in ["train", "validation", "test", "pretrain"] {
        let f = format!("{split}.jsonl");
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
    }
}

#[test]
fn train_decode_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = dir.path().join("model.json");
    let train = s(&data.join("train.jsonl")).to_string();
    let stdout = ok(&["train", "--in", &train, "--out", s(&model), "--hidden", "6", "--epochs", "2"]);
    assert!(stdout.contains("epoch   2"));
    let hyp = dir.path().join("hyp.jsonl");
    ok(&["decode", "--in", s(&data.join("test.jsonl")), "--out", s(&hyp), "--model", s(&model)]);
    let scored = dir.path().join("scored.jsonl");
    ok(&["score-confidence", "--in", &train, "--out", s(&scored), "--model", s(&model), "--alpha", "2"]);
    let body = std::fs::read_to_string(&scored).unwrap();
    let first: Value = serde_json::from_str(body.lines().nth(1).unwrap()).unwrap();
    assert!(first["confidences"].is_array());
    assert!(first["lambda"].is_array());
}

#[test]
fn alpha_zero_token_weights_equal_standard() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let report = dir.path().join("report.json");
    ok(&[
        "run-pseudolabel", "--data-dir", s(&data), "--out", s(&report), "--rounds", "1", "--alpha-grid", "0",
        "--replicates", "1", "--hidden", "4", "--epochs", "2", "--modes", "standard,token_weights",
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let runs = r["runs"].as_array().unwrap();
    let pick = |mode: &str| {
        runs.iter()
            .find(|x| x["mode"] == mode && x["condition"]["kind"] == "round" && x["condition"]["round"] == 1)
            .unwrap_or_else(|| panic!("no round-1 {mode} run"))
    };
    let (std_run, tok_run) = (pick("standard"), pick("token_weights"));
    let loss = |x: &Value| x["final_train_loss"].as_f64().unwrap();
    assert!((loss(std_run) - loss(tok_run)).abs() < 1e-9);
    assert_eq!(std_run["test_wer"], tok_run["test_wer"]);
    let table = ok(&["report", "--in", s(&report)]);
    assert!(table.contains("token_weights"));
}

#[test]
fn exit_code_two_for_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["corrupt", "--error-rate", "0.1", "--in", s(&missing), "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "config");

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nno_such_key = 3\n").unwrap();
    let out = run(&["gen-data", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("no_such_key"));

    let out = run(&["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("out_dir"));
}

#[test]
fn exit_code_three_for_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.jsonl");
    std::fs::write(&input, "this is not json\n").unwrap();
    let out = run(&["corrupt", "--error-rate", "0.1", "--in", s(&input), "--out", s(&dir.path().join("e.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["exit_code"], 3);
}

#[test]
fn exit_code_four_for_zero_probability() {
    let dir = tempfile::tempdir().unwrap();
    let lattice = dir.path().join("zero.json");
    std::fs::write(&lattice, r#"{"t":1,"u":1,"v":1,"logp":[null,0.0,null,0.0],"tokens":[0]}"#).unwrap();
    let out = run(&["loss-check", "--lattice", s(&lattice)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"]["kind"], "numerical");
}
