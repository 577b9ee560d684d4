//! In-process distributed runtime tests: worker threads, real sockets on
//! loopback, compared against the single-process oracle.

use weft::compile::compile;
use weft::deploy::{LocalhostCluster, LocalhostProcess};
use weft::ir::FlowBuilder;
use weft::programs::{build_example, EXAMPLE_NAMES};
use weft::q;
use weft::runtime::{
    graph_cluster_sizes, run_distributed, run_local_distributed_opts, run_oracle, Manifest,
    NetOptions, Transport,
};

#[test]
fn channel_order_holds_for_ten_thousand_messages_over_tcp() {
    let flow = FlowBuilder::new();
    let a = flow.process(&LocalhostProcess);
    let b = flow.process(&LocalhostProcess);
    let source = flow.source_iter(&a, q!(0 .. 10000)).unwrap();
    source.send(&b).unwrap().for_each(q!(|v| print(v))).unwrap();
    let graph = flow.finish().unwrap();

    let result = run_distributed(&graph, Transport::Tcp, 0).unwrap();
    let expect: Vec<String> = (0..10000).map(|v| v.to_string()).collect();
    assert_eq!(result.instances["process:1"], expect);
}

#[test]
fn every_example_agrees_across_oracle_memory_and_tcp() {
    for name in EXAMPLE_NAMES {
        for size in [1u32, 3] {
            let graph =
                build_example(name, &LocalhostProcess, &LocalhostCluster { size }).unwrap();
            let oracle = run_oracle(&graph, &graph_cluster_sizes(&graph)).unwrap();
            let memory = run_distributed(&graph, Transport::Memory, 0).unwrap();
            let tcp = run_distributed(&graph, Transport::Tcp, 0).unwrap();

            let sorted = |r: &weft::runtime::RunResult| -> Vec<(String, Vec<String>)> {
                r.instances
                    .iter()
                    .map(|(k, log)| {
                        let mut s = log.clone();
                        s.sort();
                        (k.clone(), s)
                    })
                    .collect()
            };
            assert_eq!(sorted(&oracle), sorted(&memory), "{name} size {size}: memory");
            assert_eq!(sorted(&oracle), sorted(&tcp), "{name} size {size}: tcp");
        }
    }
}

#[test]
fn plans_must_cover_every_manifest_instance() {
    let graph = build_example("pipeline", &LocalhostProcess, &LocalhostCluster { size: 2 })
        .unwrap();
    let plans = compile(&graph).unwrap();
    let manifest = Manifest::local(&graph, 36150);
    let opts = NetOptions { handshake_timeout: std::time::Duration::from_millis(300) };

    // Hand over only the sender's plan; the manifest still lists its peer.
    let sender_only: Vec<_> =
        plans.iter().filter(|p| p.location.to_string() == "process:0").cloned().collect();
    let err = run_local_distributed_opts(&sender_only, &manifest, Transport::Tcp, &opts)
        .unwrap_err();
    assert!(err.to_string().contains("no plan for process:1"), "unexpected error: {err}");
}

#[test]
fn run_results_list_every_manifest_instance_even_quiet_ones() {
    let graph = build_example("broadcast", &LocalhostProcess, &LocalhostCluster { size: 3 })
        .unwrap();
    let result = run_distributed(&graph, Transport::Memory, 0).unwrap();
    let keys: Vec<&str> = result.instances.keys().map(String::as_str).collect();
    assert_eq!(keys, ["cluster:0:m0", "cluster:0:m1", "cluster:0:m2", "process:0"]);
    assert!(result.instances["process:0"].is_empty());
}
