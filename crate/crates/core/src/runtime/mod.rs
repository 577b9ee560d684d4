//! Executing programs: the interpreter, the transports, and the drivers.

pub mod codec;
pub mod distributed;
pub mod exec;
pub mod manifest;
pub mod oracle;
pub mod transport;

pub use distributed::{
    bench_channel, run_distributed, run_local_distributed, run_local_distributed_opts,
    run_worker, Transport,
};
pub use manifest::{instance_key, Manifest};
pub use oracle::{graph_cluster_sizes, run_oracle, run_oracle_seeded};
pub use transport::NetOptions;

use std::collections::BTreeMap;

/// Output of a run: what every instance printed, in print order, keyed by
/// instance (`process:0`, `cluster:1:m2`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub instances: BTreeMap<String, Vec<String>>,
}
