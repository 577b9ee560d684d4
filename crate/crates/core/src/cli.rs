//! The `weft` command: build an example, then inspect or run it.
//!
//! Every verb prints machine-readable output to stdout. Exit codes: 0 on
//! success, 1 when building or running fails, 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::compile::{compile, emit_dot};
use crate::deploy::{
    bind, DeployClusterSpec, DeployProcessSpec, HostSpec, LocalhostCluster, LocalhostProcess,
    DEFAULT_BASE_PORT,
};
use crate::error::Error;
use crate::ir::FlowGraph;
use crate::programs::build_example;
use crate::runtime::{
    bench_channel, graph_cluster_sizes, run_distributed, run_oracle_seeded, Manifest, RunResult,
    Transport,
};

/// Lowest accepted [`bench_channel`] rate, in messages per second.
pub const BENCH_FLOOR: f64 = 50_000.0;

const CLOUD_MACHINE_TYPE: &str = "e2-micro";
const CLOUD_IMAGE: &str = "debian-cloud/debian-11";
const CLOUD_REGION: &str = "us-west1-a";

#[derive(Parser)]
#[command(name = "weft", about = "Choreographed streaming dataflow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render an example's global dataflow graph as DOT.
    Graph {
        /// pipeline, broadcast, partition, heartbeat, or gossip
        example: String,
        /// Members in the example's cluster, if it has one.
        #[arg(long, default_value_t = 2)]
        cluster_size: u32,
    },
    /// Emit each location's plan, to stdout or one file per location. With
    /// --out, also writes the manifest.json that `worker` takes.
    Plans {
        example: String,
        #[arg(long, default_value_t = 2)]
        cluster_size: u32,
        /// Directory to write <location>.plan files into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// First data port recorded in the manifest.
        #[arg(long, default_value_t = DEFAULT_BASE_PORT)]
        base_port: u16,
    },
    /// Emit the deployment config JSON for an example.
    DeployConfig {
        example: String,
        #[arg(long, default_value_t = 2)]
        cluster_size: u32,
        /// Bind every location to a cloud machine shape.
        #[arg(long, conflicts_with = "localhost")]
        cloud: bool,
        /// Bind every location to this machine (the default).
        #[arg(long)]
        localhost: bool,
        #[arg(long, default_value_t = DEFAULT_BASE_PORT)]
        base_port: u16,
    },
    /// Run an example distributed on this machine, one worker per instance.
    RunLocal {
        example: String,
        #[arg(long, value_enum, default_value_t = TransportArg::Tcp)]
        transport: TransportArg,
        #[arg(long, default_value_t = 2)]
        cluster_size: u32,
        /// First data port; 0 lets the OS pick every port.
        #[arg(long, default_value_t = DEFAULT_BASE_PORT)]
        base_port: u16,
    },
    /// Run an example in one process with the reference interpreter.
    Oracle {
        example: String,
        #[arg(long, default_value_t = 2)]
        cluster_size: u32,
        /// Interleaving seed; output multisets are seed-independent.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure one-channel TCP throughput; fails below 50000 msgs/sec.
    BenchChannel {
        #[arg(long, default_value_t = 500_000)]
        messages: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    /// Bounded in-process queues.
    Mem,
    /// Localhost sockets.
    Tcp,
}

/// Parse `argv` and run one verb. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn localhost_example(name: &str, cluster_size: u32) -> Result<FlowGraph, Error> {
    build_example(name, &LocalhostProcess, &LocalhostCluster { size: cluster_size })
}

fn cloud_example(name: &str, cluster_size: u32) -> Result<FlowGraph, Error> {
    let machine = || HostSpec::CloudMachine {
        machine_type: CLOUD_MACHINE_TYPE.into(),
        image: CLOUD_IMAGE.into(),
        region: CLOUD_REGION.into(),
    };
    build_example(
        name,
        &DeployProcessSpec::new(machine),
        &DeployClusterSpec::new(move || (0..cluster_size).map(|_| machine()).collect()),
    )
}

fn print_result(result: &RunResult) -> Result<(), Error> {
    let doc = serde_json::json!({ "instances": result.instances });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Graph { example, cluster_size } => {
            let graph = localhost_example(&example, cluster_size)?;
            print!("{}", emit_dot(&graph));
            Ok(())
        }
        Cmd::Plans { example, cluster_size, out, base_port } => {
            let graph = localhost_example(&example, cluster_size)?;
            let plans = compile(&graph)?;
            match out {
                None => {
                    for (i, plan) in plans.iter().enumerate() {
                        if i > 0 {
                            println!();
                        }
                        print!("{}", plan.to_text());
                    }
                }
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    for plan in &plans {
                        let name = format!(
                            "{}.plan",
                            plan.location.to_string().replace(':', "-")
                        );
                        let path = dir.join(name);
                        std::fs::write(&path, plan.to_text())?;
                        println!("{}", path.display());
                    }
                    let manifest = Manifest::local(&graph, base_port);
                    let path = dir.join("manifest.json");
                    std::fs::write(&path, manifest.to_json())?;
                    println!("{}", path.display());
                }
            }
            Ok(())
        }
        Cmd::DeployConfig { example, cluster_size, cloud, localhost: _, base_port } => {
            let graph = if cloud {
                cloud_example(&example, cluster_size)?
            } else {
                localhost_example(&example, cluster_size)?
            };
            let (config, _manifest) = bind(&graph, base_port)?;
            println!("{}", config.to_json());
            Ok(())
        }
        Cmd::RunLocal { example, transport, cluster_size, base_port } => {
            let graph = localhost_example(&example, cluster_size)?;
            let transport = match transport {
                TransportArg::Mem => Transport::Memory,
                TransportArg::Tcp => Transport::Tcp,
            };
            let result = run_distributed(&graph, transport, base_port)?;
            print_result(&result)
        }
        Cmd::Oracle { example, cluster_size, seed } => {
            let graph = localhost_example(&example, cluster_size)?;
            let sizes = graph_cluster_sizes(&graph);
            let result = run_oracle_seeded(&graph, &sizes, seed)?;
            print_result(&result)
        }
        Cmd::BenchChannel { messages } => {
            let rate = bench_channel(messages)?;
            let doc = serde_json::json!({
                "messages": messages,
                "throughput_msgs_per_sec": rate,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            if rate < BENCH_FLOOR {
                return Err(Error::Run(crate::error::RunError::Transport(format!(
                    "throughput {rate:.0} msgs/sec is below the {BENCH_FLOOR:.0} floor"
                ))));
            }
            Ok(())
        }
    }
}

/// What `run-local` and `oracle` print, reparsed. Tests use this to compare
/// a CLI run against a library run.
pub fn parse_run_output(text: &str) -> Result<BTreeMap<String, Vec<String>>, Error> {
    #[derive(serde::Deserialize)]
    struct Doc {
        instances: BTreeMap<String, Vec<String>>,
    }
    let doc: Doc = serde_json::from_str(text)?;
    Ok(doc.instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["weft", "no-such-verb"]), 2);
        assert_eq!(run(["weft"]), 2);
    }

    #[test]
    fn unknown_example_exits_one() {
        assert_eq!(run(["weft", "graph", "no-such-example"]), 1);
    }

    #[test]
    fn known_verbs_succeed() {
        assert_eq!(run(["weft", "graph", "pipeline"]), 0);
        assert_eq!(run(["weft", "plans", "broadcast"]), 0);
        assert_eq!(run(["weft", "deploy-config", "gossip", "--cloud"]), 0);
        assert_eq!(
            run(["weft", "oracle", "heartbeat", "--cluster-size", "3"]),
            0
        );
        assert_eq!(
            run([
                "weft",
                "run-local",
                "pipeline",
                "--transport",
                "mem",
                "--base-port",
                "0"
            ]),
            0
        );
    }
}
