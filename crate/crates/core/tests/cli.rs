use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use litevla::action_space::ActionCommand;
use litevla::bridge::{decode_twist, encode_twist, TwistMessage};
use litevla::sim::TABLE_ROWS;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_litevla"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the `error_class` from the JSON line on stderr.
fn failure(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = run(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    (out.status.code().unwrap(), v["error_class"].as_str().unwrap().to_string())
}

fn report(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{"seed": 5,
            "data": {"episodes": 4},
            "train": {"epochs": 2},
            "eval": {"episodes": 3},
            "compare": {"observations": 40, "episodes": 3}}"#,
    )
    .unwrap();
    path
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let cfg = cfg.to_str().unwrap();
    ok(d, &["--config", cfg, "gen-data", "--out", "data.gguf"]);
    ok(d, &["--config", cfg, "train", "--data", "data.gguf", "--out", "a.gguf"]);
    ok(d, &["--config", cfg, "train", "--data", "data.gguf", "--out", "b.gguf", "--report", "train.json"]);
    let a = std::fs::read(d.join("a.gguf")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.gguf")).unwrap());
    let r = report(d.join("train.json"));
    assert_eq!(r["seed"], 5);
    assert_eq!(r["config"]["train"]["epochs"], 2);
    assert!(r["result"]["final_loss"].as_f64().unwrap() < r["result"]["initial_loss"].as_f64().unwrap());

    ok(d, &["--config", cfg, "train", "--data", "data.gguf", "--out", "c.gguf", "--seed", "6"]);
    assert_ne!(a, std::fs::read(d.join("c.gguf")).unwrap());

    ok(d, &["quantize", "a.gguf", "--out", "q.gguf"]);
    let listing = ok(d, &["inspect", "q.gguf", "--report", "inspect.json"]);
    assert!(listing.contains("litevla.quant.codec = \"q4b32\""));
    let r = report(d.join("inspect.json"));
    assert_eq!(r["result"]["passed"], true);
    assert!(r["result"]["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .any(|t| t["name"] == "w1" && t["dtype"] == "Q4B32"));

    ok(d, &["--config", cfg, "compare-quant", "a.gguf", "b.gguf", "--report", "same.json"]);
    let r = report(d.join("same.json"));
    assert_eq!(r["result"]["agreement"]["agreement"], 1.0);
    assert_eq!(r["result"]["success_drop"], 0.0);
    assert!(r["result"]["thresholds"]["source"].as_str().unwrap().contains("artifact-chosen"));

    // a trained-for-two-epochs model is not expected to pass; the report is
    // written either way and the exit code reflects the verdict
    let out = run(d, &["--config", cfg, "compare-quant", "a.gguf", "q.gguf", "--report", "q.json"]);
    let r = report(d.join("q.json"));
    let passed = r["result"]["agreement_ok"] == true && r["result"]["success_drop_ok"] == true;
    assert_eq!(out.status.success(), passed);

    let (code, class) = failure(d, &["quantize", "q.gguf", "--out", "qq.gguf"]);
    assert_eq!((code, class.as_str()), (1, "config"));
}

#[test]
fn errors_carry_a_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(failure(d, &["inspect", "missing.gguf"]), (1, "io".into()));

    std::fs::write(d.join("bad.gguf"), b"GGUX\x03\0\0\0").unwrap();
    assert_eq!(failure(d, &["inspect", "bad.gguf"]), (1, "container:bad_magic".into()));
    std::fs::write(d.join("short.gguf"), b"GGUF\x03\0\0\0\x01").unwrap();
    assert_eq!(failure(d, &["inspect", "short.gguf"]), (1, "container:truncated".into()));

    assert_eq!(failure(d, &["frobnicate"]).0, 2);
    assert_eq!(failure(d, &["frobnicate"]).1, "usage");
    assert_eq!(failure(d, &["bench-latency", "nope"]), (1, "config".into()));
    assert_eq!(failure(d, &["bench-latency", "expert", "--runs", "0"]), (1, "sim:config".into()));

    std::fs::write(d.join("typo.json"), r#"{"sed": 1}"#).unwrap();
    assert_eq!(
        failure(d, &["--config", "typo.json", "eval-loop", "expert"]),
        (1, "config".into())
    );
}

#[test]
fn eval_loop_and_bench_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(d, &["eval-loop", "expert", "--episodes", "5", "--goal-shift", "5", "--report", "eval.json"]);
    assert!(text.contains("success rate"));
    let r = report(d.join("eval.json"));
    assert_eq!(r["result"]["summary"]["success_rate"], 1.0);
    assert_eq!(r["config"]["episode"]["goal_shift_time"], 5.0);
    assert_eq!(r["result"]["episodes"].as_array().unwrap().len(), 5);

    let table = ok(d, &["bench-latency", "delay:2:constant:16:16", "--runs", "20", "--warmup", "2", "--report", "bench.json"]);
    for label in TABLE_ROWS {
        assert!(table.contains(label), "{label}");
    }
    let r = report(d.join("bench.json"));
    assert_eq!(r["result"]["runs"], 20);
    assert_eq!(r["result"]["samples_ms"].as_array().unwrap().len(), 20);
    assert_eq!(r["result"]["warmup_ms"].as_array().unwrap().len(), 2);
    let mean = r["result"]["mean_ms"].as_f64().unwrap();
    assert!((2.0..10.0).contains(&mean), "{mean}");
}

#[test]
fn serve_bridge_honors_port_env_and_forwards() {
    let dir = tempfile::tempdir().unwrap();
    let port = {
        let probe = UdpSocket::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().port()
    };
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(3))).unwrap();
    let sink_addr = sink.local_addr().unwrap().to_string();
    let report_path = dir.path().join("bridge.json");
    let child = bin()
        .env("LITEVLA_BRIDGE_PORT", port.to_string())
        .args(["serve-bridge", "--duration", "1.5", "--forward", &sink_addr])
        .arg("--report")
        .arg(&report_path)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();

    // the first forwarded frame proves the bridge is up
    let mut buf = [0u8; 128];
    let (n, _) = sink.recv_from(&mut buf).unwrap();
    assert!(decode_twist(&buf[..n]).unwrap().stale);

    let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let twist = TwistMessage::from_command(ActionCommand::new(0.2, -0.3));
    tx.send_to(&encode_twist(&twist, 0, 0, false), ("127.0.0.1", port)).unwrap();
    let mut saw_command = false;
    for _ in 0..100 {
        let Ok((n, _)) = sink.recv_from(&mut buf) else { break };
        let f = decode_twist(&buf[..n]).unwrap();
        if !f.stale && f.twist == twist {
            saw_command = true;
            break;
        }
    }
    assert!(saw_command);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let r = report(report_path);
    assert_eq!(r["result"]["port"], port);
    assert_eq!(r["result"]["received"]["accepted"], 1);
}
