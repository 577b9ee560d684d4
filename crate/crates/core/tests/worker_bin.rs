//! End-to-end tests of the worker binary: real OS processes, real sockets,
//! plan and manifest files on disk, exactly as a deployment would run them.

use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

fn emit_plans(example: &str, cluster_size: u32, base_port: u16, dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_weft"))
        .args([
            "plans",
            example,
            "--cluster-size",
            &cluster_size.to_string(),
            "--base-port",
            &base_port.to_string(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .status()
        .expect("spawn weft binary");
    assert!(status.success(), "plans emission failed");
}

fn spawn_worker(dir: &Path, plan: &str, location: &str, member: u32) -> Child {
    Command::new(env!("CARGO_BIN_EXE_worker"))
        .arg(dir.join(plan))
        .args(["--manifest", dir.join("manifest.json").to_str().unwrap()])
        .args(["--location", location])
        .args(["--member", &member.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn worker binary")
}

fn finish(worker: Child) -> (String, Vec<String>) {
    let out = worker.wait_with_output().expect("worker exits");
    assert!(
        out.status.success(),
        "worker failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).expect("worker JSON line");
    let instance = doc["instance"].as_str().expect("instance key").to_string();
    let log = doc["log"]
        .as_array()
        .expect("log array")
        .iter()
        .map(|v| v.as_str().expect("log line").to_string())
        .collect();
    (instance, log)
}

#[test]
fn pipeline_runs_as_two_real_processes() {
    let dir = tempfile::tempdir().unwrap();
    emit_plans("pipeline", 2, 36110, dir.path());

    let recv = spawn_worker(dir.path(), "process-1.plan", "process:1", 0);
    let send = spawn_worker(dir.path(), "process-0.plan", "process:0", 0);

    assert_eq!(finish(send), ("process:0".into(), vec![]));
    assert_eq!(finish(recv), ("process:1".into(), vec!["6".into(), "8".into()]));
}

#[test]
fn broadcast_runs_as_three_real_processes() {
    let dir = tempfile::tempdir().unwrap();
    emit_plans("broadcast", 2, 36120, dir.path());

    let m0 = spawn_worker(dir.path(), "cluster-0.plan", "cluster:0", 0);
    let m1 = spawn_worker(dir.path(), "cluster-0.plan", "cluster:0", 1);
    let leader = spawn_worker(dir.path(), "process-0.plan", "process:0", 0);

    finish(leader);
    let expect = vec!["0".to_string(), "1".into(), "2".into(), "3".into(), "4".into()];
    for (worker, key) in [(m0, "cluster:0:m0"), (m1, "cluster:0:m1")] {
        let (instance, mut log) = finish(worker);
        assert_eq!(instance, key);
        log.sort();
        assert_eq!(log, expect);
    }
}

#[test]
fn a_worker_with_no_peers_times_out_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    emit_plans("pipeline", 2, 36130, dir.path());

    for (plan, location) in [("process-1.plan", "process:1"), ("process-0.plan", "process:0")] {
        let started = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_worker"))
            .arg(dir.path().join(plan))
            .args(["--manifest", dir.path().join("manifest.json").to_str().unwrap()])
            .args(["--location", location])
            .args(["--handshake-timeout-ms", "300"])
            .output()
            .expect("spawn worker binary");
        assert_eq!(out.status.code(), Some(1), "{location} should fail without peers");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("error"), "stderr was: {stderr}");
        assert!(
            started.elapsed() < Duration::from_secs(5),
            "{location} hung instead of timing out"
        );
    }
}

#[test]
fn a_worker_rejects_a_location_missing_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    emit_plans("pipeline", 2, 36140, dir.path());

    let out = Command::new(env!("CARGO_BIN_EXE_worker"))
        .arg(dir.path().join("process-0.plan"))
        .args(["--manifest", dir.path().join("manifest.json").to_str().unwrap()])
        .args(["--location", "process:7"])
        .output()
        .expect("spawn worker binary");
    assert_eq!(out.status.code(), Some(1));
}
