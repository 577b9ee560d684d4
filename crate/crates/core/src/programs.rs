//! The bundled example programs.
//!
//! Each builder adds one complete program to a [`FlowBuilder`]: locations,
//! operators, and network hops. Together they exercise every channel shape
//! on small, hand-checkable data. The CLI exposes them by name through
//! [`build_example`] with fixed default parameters; tests call the builders
//! directly to vary corpus sizes, tick counts, and seeds.

use crate::deploy::{ClusterSpec, ProcessSpec};
use crate::error::{BuildError, Error};
use crate::ir::{FlowBuilder, FlowGraph};
use crate::q;
use crate::staging::{quote_with, Value};

/// Names accepted by [`build_example`], in documentation order.
pub const EXAMPLE_NAMES: &[&str] =
    &["pipeline", "broadcast", "partition", "heartbeat", "gossip"];

pub const DEFAULT_HEARTBEAT_TICKS: i64 = 3;
pub const DEFAULT_GOSSIP_SEED: i64 = 42;
pub const DEFAULT_GOSSIP_ROUNDS: i64 = 5;
pub const DEFAULT_GOSSIP_FANOUT: i64 = 1;

/// Two processes: the first filters and doubles a counter stream, the
/// second prints what arrives. The smallest possible multi-location program.
pub fn pipeline(
    flow: &FlowBuilder,
    first: &dyn ProcessSpec,
    second: &dyn ProcessSpec,
) -> Result<(), BuildError> {
    let src = flow.process(first);
    let dst = flow.process(second);
    flow.source_iter(&src, q!(0 .. 5))?
        .filter(q!(|v| v > 2))?
        .map(q!(|v| v * 2))?
        .send(&dst)?
        .for_each(q!(|v| print(v)))
}

/// A leader process crosses its data with the cluster's member ids, so
/// every member receives (and prints) every element.
pub fn broadcast(
    flow: &FlowBuilder,
    leader: &dyn ProcessSpec,
    members: &dyn ClusterSpec,
) -> Result<(), BuildError> {
    let p = flow.process(leader);
    let c = flow.cluster(members);
    let ids = flow.member_ids(&p, &c)?;
    let data = flow.source_iter(&p, q!(0 .. 5))?;
    ids.cross_product(&data)?
        .send(&c)?
        .for_each(q!(|v| print(v)))
}

/// Partitioned word count: a feeder hashes each word to a member, members
/// count what they receive, and each prints its local tally once at the end.
/// The hash is total over words, so every occurrence of a word lands at the
/// same member and the per-member tallies merge into the global counts.
pub fn partition(
    flow: &FlowBuilder,
    feeder: &dyn ProcessSpec,
    counters: &dyn ClusterSpec,
    words: &[&str],
) -> Result<(), BuildError> {
    let p = flow.process(feeder);
    let c = flow.cluster(counters);
    let n = i64::from(c.size());
    let corpus = Value::List(words.iter().map(|w| Value::Str((*w).into())).collect());
    flow.source_iter(&p, quote_with("corpus", &[("corpus", corpus)])?)?
        .map(quote_with(
            "|w| (cid(hash(w) % n), w)",
            &[("n", Value::Int(n))],
        )?)?
        .send(&c)?
        .fold(q!([]), q!(|counts, w| bump(counts, w)))?
        .for_each(q!(|counts| print(counts)))
}

/// A monitor broadcasts `ticks` numbered heartbeats to every member; each
/// member echoes what it heard straight back, and the return hop tags each
/// echo with the member's id, so the monitor sees who is alive per tick.
pub fn heartbeat(
    flow: &FlowBuilder,
    monitor: &dyn ProcessSpec,
    members: &dyn ClusterSpec,
    ticks: i64,
) -> Result<(), BuildError> {
    let p = flow.process(monitor);
    let c = flow.cluster(members);
    let ids = flow.member_ids(&p, &c)?;
    let beats = flow.source_iter(&p, quote_with("0 .. k", &[("k", Value::Int(ticks))])?)?;
    ids.cross_product(&beats)?
        .send(&c)?
        .send(&p)?
        .for_each(q!(|echo| print(echo)))
}

/// A seeder spreads each round's number to `fanout` members chosen by a
/// seeded deterministic sampler (with replacement). Reevaluating the same
/// sampler expression reproduces exactly who received what.
pub fn gossip(
    flow: &FlowBuilder,
    seeder: &dyn ProcessSpec,
    members: &dyn ClusterSpec,
    seed: i64,
    rounds: i64,
    fanout: i64,
) -> Result<(), BuildError> {
    let p = flow.process(seeder);
    let c = flow.cluster(members);
    let n = i64::from(c.size());
    let rounds = flow.source_iter(&p, quote_with("0 .. r", &[("r", Value::Int(rounds))])?)?;
    let fan = flow.source_iter(&p, quote_with("0 .. f", &[("f", Value::Int(fanout))])?)?;
    rounds
        .cross_product(&fan)?
        .map(quote_with(
            "|t| (pick(seed, t.0 * 31 + t.1, n), t.0)",
            &[("seed", Value::Int(seed)), ("n", Value::Int(n))],
        )?)?
        .send(&c)?
        .for_each(q!(|round| print(round)))
}

/// A plain-prose corpus for the `partition` example.
pub fn default_corpus() -> Vec<&'static str> {
    "the quick brown fox jumps over the lazy dog while the dog sleeps \
     the fox circles the yard and the crow watches from the fence \
     every jump lands short of the fence and the crow counts each one \
     the dog wakes and the fox is gone over the hill before noon"
        .split_whitespace()
        .collect()
}

/// Build a named example with its default parameters, using `proc_spec` for
/// every process location and `cluster_spec` for the cluster (ignored by
/// `pipeline`, which has no cluster).
pub fn build_example(
    name: &str,
    proc_spec: &dyn ProcessSpec,
    cluster_spec: &dyn ClusterSpec,
) -> Result<FlowGraph, Error> {
    let flow = FlowBuilder::new();
    match name {
        "pipeline" => pipeline(&flow, proc_spec, proc_spec)?,
        "broadcast" => broadcast(&flow, proc_spec, cluster_spec)?,
        "partition" => partition(&flow, proc_spec, cluster_spec, &default_corpus())?,
        "heartbeat" => heartbeat(&flow, proc_spec, cluster_spec, DEFAULT_HEARTBEAT_TICKS)?,
        "gossip" => gossip(
            &flow,
            proc_spec,
            cluster_spec,
            DEFAULT_GOSSIP_SEED,
            DEFAULT_GOSSIP_ROUNDS,
            DEFAULT_GOSSIP_FANOUT,
        )?,
        other => {
            return Err(Error::Run(crate::error::RunError::Plan(format!(
                "unknown example {other:?}; expected one of {}",
                EXAMPLE_NAMES.join(", ")
            ))))
        }
    }
    Ok(flow.finish()?)
}
