use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

fn fogedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogedge")).args(args).output().expect("run fogedge")
}

fn ok(args: &[&str]) -> String {
    let out = fogedge(args);
    assert!(
        out.status.success(),
        "fogedge {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A Daphnet-style log: leading out-of-experiment rows, then alternating
/// walking and freezing blocks on the thigh sensor.
fn write_log(path: &Path, blocks: usize, seed: i64) {
    let mut text = String::new();
    let mut t = 0i64;
    for _ in 0..40 {
        writeln!(text, "{t} 0 0 0 0 0 0 0 0 0 0").unwrap();
        t += 15;
    }
    for b in 0..blocks {
        let fog = b % 3 == 1;
        for i in 0..260 {
            let phase = (i as f64 + seed as f64) * if fog { 1.1 } else { 0.16 };
            let amp = if fog { 900.0 } else { 150.0 };
            let x = (amp * phase.sin()) as i32;
            let y = -1000 + (60.0 * phase.cos()) as i32;
            let z = 100 + ((i + b) % 9) as i32;
            writeln!(text, "{t} 1 2 3 {x} {y} {z} 4 5 6 {}", if fog { 2 } else { 1 }).unwrap();
            t += 15;
        }
    }
    fs::write(path, text).unwrap();
}

fn prepare(dir: &Path) {
    let raw = dir.join("raw");
    fs::create_dir_all(&raw).unwrap();
    write_log(&raw.join("S01R01.txt"), 18, 0);
    write_log(&raw.join("S02R01.txt"), 15, 7);
    fs::write(
        dir.join("train.json"),
        r#"{"max_epochs": 6, "architecture": [
        {"type": "conv1d", "filters": 4, "kernel": 5},
        {"type": "maxpool", "pool": 2},
        {"type": "conv1d", "filters": 8, "kernel": 3},
        {"type": "maxpool", "pool": 4},
        {"type": "dropout"},
        {"type": "dense", "units": 2}
    ]}"#,
    )
    .unwrap();
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn full_command_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d);

    let out = ok(&["ingest", "--in", &p(d, "raw"), "--out", &p(d, "clean")]);
    assert!(out.contains("2 files"), "{out}");
    assert!(d.join("clean/S01_R01_0.csv").exists());

    let out = ok(&["segment", "--in", &p(d, "clean"), "--out", &p(d, "windows.bin"), "--seed", "3"]);
    assert!(out.contains("train:") && out.contains("test:"), "{out}");
    assert!(d.join("windows.split.json").exists());

    ok(&[
        "train",
        "--windows",
        &p(d, "windows.bin"),
        "--config",
        &p(d, "train.json"),
        "--out",
        &p(d, "model.fp.bin"),
        "--report",
        &p(d, "train_report.json"),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("train_report.json")).unwrap()).unwrap();
    assert!(report["history"]["epochs"].as_array().is_some_and(|e| !e.is_empty()));

    let out = ok(&[
        "export",
        "--model",
        &p(d, "model.fp.bin"),
        "--windows",
        &p(d, "windows.bin"),
        "--out",
        &p(d, "model.q.bin"),
    ]);
    assert!(out.contains("bytes"), "{out}");
    let size = fs::metadata(d.join("model.q.bin")).unwrap().len();
    assert!(size < 1_048_576);

    let too_small = fogedge(&[
        "export",
        "--model",
        &p(d, "model.fp.bin"),
        "--windows",
        &p(d, "windows.bin"),
        "--out",
        &p(d, "tiny.q.bin"),
        "--budget",
        "100",
    ]);
    assert!(!too_small.status.success());
    assert!(String::from_utf8_lossy(&too_small.stderr).contains("budget"));

    let float_eval = ok(&["evaluate", "--model", &p(d, "model.fp.bin"), "--windows", &p(d, "windows.bin")]);
    assert!(float_eval.contains("accuracy"), "{float_eval}");
    ok(&[
        "evaluate",
        "--model",
        &p(d, "model.q.bin"),
        "--windows",
        &p(d, "windows.bin"),
        "--out",
        &p(d, "q_eval.json"),
    ]);
    let q_eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("q_eval.json")).unwrap()).unwrap();

    ok(&["stream", "--model", &p(d, "model.q.bin"), "--windows", &p(d, "windows.bin"), "--out", &p(d, "report.json")]);
    let stream: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    for key in ["confusion", "accuracy", "per_class", "latency_ms", "n_windows"] {
        assert!(stream.get(key).is_some(), "{key} missing from {stream}");
    }
    assert_eq!(stream["confusion"], q_eval["confusion"]);

    let out = ok(&["echo-check", "--model", &p(d, "model.q.bin"), "--count", "200"]);
    assert!(out.contains("200/200"), "{out}");
    let out = ok(&["echo-check", "--model", &p(d, "model.q.bin"), "--values", "1.0,-1.0"]);
    assert!(out.contains("2/2"), "{out}");

    let port = free_port();
    let child = Command::new(env!("CARGO_BIN_EXE_fogedge"))
        .args(["device", "--model", &p(d, "model.q.bin"), "--listen", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _server = Server(child);
    let addr = format!("127.0.0.1:{port}");
    let started = Instant::now();
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(started.elapsed() < Duration::from_secs(10), "device never came up");
        thread::sleep(Duration::from_millis(50));
    }
    ok(&["stream", "--connect", &addr, "--windows", &p(d, "windows.bin"), "--out", &p(d, "tcp_report.json")]);
    let tcp: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tcp_report.json")).unwrap()).unwrap();
    assert_eq!(tcp["confusion"], stream["confusion"]);
    let out = ok(&["echo-check", "--connect", &addr, "--count", "50"]);
    assert!(out.contains("50/50"), "{out}");
}

#[test]
fn tune_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d);
    ok(&["ingest", "--in", &p(d, "raw"), "--out", &p(d, "clean")]);
    ok(&["segment", "--in", &p(d, "clean"), "--out", &p(d, "windows.bin")]);
    fs::write(
        d.join("grid.json"),
        r#"{"filters": [2, 4], "learning_rates": [0.01, 0.001], "epochs": [2], "batch_sizes": [16]}"#,
    )
    .unwrap();
    ok(&["tune", "--windows", &p(d, "windows.bin"), "--grid", &p(d, "grid.json"), "--out", &p(d, "tune.json")]);
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tune.json")).unwrap()).unwrap();
    assert_eq!(t["table"].as_array().unwrap().len(), 4);
    assert!(t["best"]["filters"].is_u64());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("junk.bin"), b"not a model").unwrap();
    let out = fogedge(&["echo-check", "--model", &p(d, "junk.bin")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = fogedge(&["stream", "--windows", &p(d, "junk.bin"), "--out", &p(d, "r.json")]);
    assert!(!out.status.success());
    let out = fogedge(&["segment", "--in", &p(d, "missing"), "--out", &p(d, "w.bin"), "--split", "0.5,0.5"]);
    assert!(!out.status.success());
}
