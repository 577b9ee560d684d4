//! One location instance in one process.
//!
//! Reads a plan and a manifest, binds this instance's manifest port, meets
//! its peers over TCP, runs the plan to completion, and prints a JSON line:
//! `{"instance":"cluster:0:m1","log":["..."]}`. Exits 1 on any failure.

use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;

use weft::compile::parse_plan;
use weft::ir::LocationId;
use weft::runtime::{instance_key, run_worker, Manifest, NetOptions};

#[derive(Parser)]
#[command(name = "worker", about = "Run one location instance of a compiled plan")]
struct Args {
    /// Plan file, as written by `weft plans --out`.
    plan: PathBuf,
    /// Manifest file listing every instance's address and port.
    #[arg(long)]
    manifest: PathBuf,
    /// This worker's location, like process:0 or cluster:1.
    #[arg(long)]
    location: String,
    /// Member index within a cluster; processes use 0.
    #[arg(long, default_value_t = 0)]
    member: u32,
    /// How long to keep retrying peer connections, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    handshake_timeout_ms: u64,
}

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(line) => println!("{line}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

fn run(args: &Args) -> Result<String, weft::Error> {
    let plan = parse_plan(&std::fs::read_to_string(&args.plan)?)?;
    let manifest = Manifest::from_json(&std::fs::read_to_string(&args.manifest)?)?;
    let location: LocationId = args
        .location
        .parse()
        .map_err(|e: String| weft::error::RunError::Plan(e))?;
    let opts = NetOptions {
        handshake_timeout: Duration::from_millis(args.handshake_timeout_ms),
    };
    let log = run_worker(&plan, &manifest, location, args.member, &opts)?;
    let doc = serde_json::json!({
        "instance": instance_key(location, args.member),
        "log": log,
    });
    Ok(doc.to_string())
}
