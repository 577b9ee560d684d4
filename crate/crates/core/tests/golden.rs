//! Golden-file tests: emitted artifacts are frozen byte-for-byte.
//!
//! These run the installed binary the way a user would and compare its
//! output against committed fixtures. Any intentional format change must
//! update the fixtures in the same commit, which makes format drift visible
//! in review.

use std::process::Command;

use weft::compile::emit_dot;
use weft::ir::FlowBuilder;

fn weft(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_weft"))
        .args(args)
        .output()
        .expect("spawn weft binary");
    assert!(
        out.status.success(),
        "weft {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is UTF-8")
}

#[test]
fn broadcast_plan_files_match_committed_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    weft(&["plans", "broadcast", "--out", out_dir]);

    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    assert_eq!(read("process-0.plan"), include_str!("golden/broadcast_process-0.plan"));
    assert_eq!(read("cluster-0.plan"), include_str!("golden/broadcast_cluster-0.plan"));
    assert_eq!(read("manifest.json"), include_str!("golden/broadcast_manifest.json"));
}

#[test]
fn broadcast_dot_matches_committed_fixture() {
    assert_eq!(weft(&["graph", "broadcast"]), include_str!("golden/broadcast.dot"));
}

#[test]
fn broadcast_cloud_config_matches_committed_fixture() {
    let got = weft(&["deploy-config", "broadcast", "--cloud", "--cluster-size", "2"]);
    let want = include_str!("golden/broadcast_cloud.json");
    assert_eq!(got, want);
    for literal in ["e2-micro", "debian-cloud/debian-11", "us-west1-a"] {
        assert!(want.contains(literal), "fixture lost the literal {literal:?}");
    }
}

#[test]
fn empty_graph_emits_a_header_only_digraph() {
    let graph = FlowBuilder::new().finish().unwrap();
    assert_eq!(emit_dot(&graph), "digraph flow {\n  rankdir=LR;\n}\n");
}
