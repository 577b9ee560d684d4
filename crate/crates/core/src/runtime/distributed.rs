//! Distributed execution: many instances, each with its own interpreter.
//!
//! The entry points share all machinery with the oracle except the
//! transport. [`run_local_distributed`] runs compiled plans with one worker
//! thread per manifest instance, over in-memory queues or real localhost
//! TCP; [`run_distributed`] is the same starting from a graph. [`run_worker`]
//! is one instance in one process, finding peers through the manifest; the
//! `worker` binary is a thin wrapper around it. [`bench_channel`] measures
//! raw frame throughput over a real socket.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use super::codec::{self, Frame};
use super::exec::{Endpoints, FrameSink, FrameSource, InstanceRuntime};
use super::manifest::{instance_key, Manifest};
use super::transport::{
    accept_inbound, bind_listener, connect_sink, MemSink, MemSource, NetOptions,
    MEM_CHANNEL_DEPTH,
};
use super::RunResult;
use crate::compile::plan::{Direction, LocationPlan};
use crate::compile::compile;
use crate::error::RunError;
use crate::ir::{ChannelId, FlowGraph, LocationId};
use crate::staging::{TypeTag, Value};

/// How instances exchange frames in [`run_distributed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Bounded in-process queues.
    Memory,
    /// Real localhost sockets, one listener per instance.
    Tcp,
}

/// Run every instance of the graph as a thread of this process.
///
/// With [`Transport::Tcp`], each instance binds `127.0.0.1` at the manifest
/// port; pass `base_port` 0 to use OS-assigned ports, which is what tests
/// should do to avoid collisions.
pub fn run_distributed(
    graph: &FlowGraph,
    transport: Transport,
    base_port: u16,
) -> Result<RunResult, RunError> {
    let plans = compile(graph).map_err(|e| RunError::Plan(e.to_string()))?;
    let manifest = Manifest::local(graph, base_port);
    run_local_distributed(&plans, &manifest, transport)
}

/// Run compiled plans as one worker thread per manifest instance.
pub fn run_local_distributed(
    plans: &[LocationPlan],
    manifest: &Manifest,
    transport: Transport,
) -> Result<RunResult, RunError> {
    run_local_distributed_opts(plans, manifest, transport, &NetOptions::default())
}

/// [`run_local_distributed`] with explicit network options.
pub fn run_local_distributed_opts(
    plans: &[LocationPlan],
    manifest: &Manifest,
    transport: Transport,
    opts: &NetOptions,
) -> Result<RunResult, RunError> {
    match transport {
        Transport::Memory => run_memory(plans, manifest),
        Transport::Tcp => run_tcp(plans, manifest.clone(), opts),
    }
}

fn plan_for<'a>(plans: &'a [LocationPlan], loc: LocationId) -> Result<&'a LocationPlan, RunError> {
    plans
        .iter()
        .find(|p| p.location == loc)
        .ok_or_else(|| RunError::Plan(format!("no plan for {loc}")))
}

/// Drive one instance to completion and hand back its printed output.
fn pump(mut runtime: InstanceRuntime) -> Result<Vec<String>, RunError> {
    while !runtime.is_done() {
        runtime.step()?;
    }
    Ok(runtime.into_output())
}

fn collect(
    handles: Vec<(String, thread::JoinHandle<Result<Vec<String>, RunError>>)>,
) -> Result<RunResult, RunError> {
    let mut instances = BTreeMap::new();
    let mut first_error = None;
    for (key, handle) in handles {
        match handle.join() {
            Ok(Ok(log)) => {
                instances.insert(key, log);
            }
            Ok(Err(e)) => {
                first_error.get_or_insert(RunError::Transport(format!("{key}: {e}")));
            }
            Err(_) => {
                first_error.get_or_insert(RunError::Transport(format!("{key}: panicked")));
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(RunResult { instances }),
    }
}

fn run_memory(plans: &[LocationPlan], manifest: &Manifest) -> Result<RunResult, RunError> {
    let sizes = manifest.sizes_by_index()?;
    let instances = manifest.instance_ids()?;

    // One bounded queue per (channel, receiving member); senders share the
    // sending half. The sender count per queue is what receivers use to know
    // when the channel is finished.
    let mut receivers: BTreeMap<(ChannelId, u32), mpsc::Receiver<Frame>> = BTreeMap::new();
    let mut senders: BTreeMap<(ChannelId, u32), mpsc::SyncSender<Frame>> = BTreeMap::new();
    let mut sender_counts: BTreeMap<ChannelId, usize> = BTreeMap::new();
    for plan in plans {
        for pc in &plan.channels {
            match pc.dir {
                Direction::Recv => {
                    for member in 0..manifest.instances(plan.location)? {
                        let (tx, rx) = mpsc::sync_channel(MEM_CHANNEL_DEPTH);
                        senders.insert((pc.id, member), tx);
                        receivers.insert((pc.id, member), rx);
                    }
                }
                Direction::Send => {
                    sender_counts.insert(pc.id, manifest.instances(plan.location)? as usize);
                }
            }
        }
    }

    let mut handles = Vec::new();
    for (loc, member) in instances {
        let plan = plan_for(plans, loc)?.clone();
        let key = instance_key(loc, member);
        let sizes = sizes.clone();

        // Collect this instance's Send-able endpoint halves up front; the
        // non-Send runtime is assembled inside its own thread.
        let mut out_txs: BTreeMap<ChannelId, Vec<mpsc::SyncSender<Frame>>> = BTreeMap::new();
        let mut in_rxs: BTreeMap<ChannelId, (mpsc::Receiver<Frame>, usize)> = BTreeMap::new();
        for pc in &plan.channels {
            match pc.dir {
                Direction::Send => {
                    let dest_count = manifest.instances(pc.peer)?;
                    let txs: Vec<_> = (0..dest_count)
                        .map(|d| senders[&(pc.id, d)].clone())
                        .collect();
                    out_txs.insert(pc.id, txs);
                }
                Direction::Recv => {
                    let rx = receivers.remove(&(pc.id, member)).ok_or_else(|| {
                        RunError::Plan(format!("{} receiver already taken", pc.id))
                    })?;
                    let count = *sender_counts
                        .get(&pc.id)
                        .ok_or_else(|| RunError::Plan(format!("{} has no sender", pc.id)))?;
                    in_rxs.insert(pc.id, (rx, count));
                }
            }
        }

        let handle = thread::spawn(move || {
            let outbound = out_txs
                .into_iter()
                .map(|(id, txs)| {
                    let sinks: Vec<Box<dyn FrameSink>> = txs
                        .into_iter()
                        .map(|tx| Box::new(MemSink(tx)) as Box<dyn FrameSink>)
                        .collect();
                    (id, sinks)
                })
                .collect();
            let inbound = in_rxs
                .into_iter()
                .map(|(id, (rx, count))| {
                    (id, (Box::new(MemSource(rx)) as Box<dyn FrameSource>, count))
                })
                .collect();
            let runtime =
                InstanceRuntime::new(&plan, member, sizes, Endpoints { outbound, inbound })?;
            pump(runtime)
        });
        handles.push((key, handle));
    }
    drop(senders);
    collect(handles)
}

fn run_tcp(
    plans: &[LocationPlan],
    mut manifest: Manifest,
    opts: &NetOptions,
) -> Result<RunResult, RunError> {
    // Bind every listener before any instance starts connecting, rewriting
    // the manifest when the OS picks the port.
    let mut listeners = Vec::new();
    for i in 0..manifest.locations.len() {
        let entry = &manifest.locations[i];
        let (listener, port) = bind_listener(&entry.addr, entry.port)?;
        manifest.locations[i].port = port;
        listeners.push(listener);
    }

    let mut handles = Vec::new();
    for (entry, listener) in manifest.locations.iter().zip(listeners) {
        let loc = entry.location()?;
        let member = entry.member;
        let plan = plan_for(plans, loc)?.clone();
        let manifest = manifest.clone();
        let opts = opts.clone();
        let key = instance_key(loc, member);
        let handle = thread::spawn(move || {
            let runtime = tcp_instance(&plan, &manifest, member, listener, &opts)?;
            pump(runtime)
        });
        handles.push((key, handle));
    }
    collect(handles)
}

/// Assemble one instance's runtime over TCP: accept inbound peers, connect
/// outbound ones, wire both into an interpreter.
fn tcp_instance(
    plan: &LocationPlan,
    manifest: &Manifest,
    member: u32,
    listener: std::net::TcpListener,
    opts: &NetOptions,
) -> Result<InstanceRuntime, RunError> {
    let sizes = manifest.sizes_by_index()?;

    let mut expected = Vec::new();
    for pc in &plan.channels {
        if pc.dir == Direction::Recv {
            expected.push((pc.id, manifest.instances(pc.peer)? as usize));
        }
    }
    let sources = accept_inbound(listener, &expected, opts)?;
    let mut inbound: BTreeMap<ChannelId, (Box<dyn FrameSource>, usize)> = BTreeMap::new();
    for ((id, source), (_, count)) in sources.into_iter().zip(&expected) {
        inbound.insert(id, (Box::new(source) as Box<dyn FrameSource>, *count));
    }

    let mut outbound: BTreeMap<ChannelId, Vec<Box<dyn FrameSink>>> = BTreeMap::new();
    for pc in &plan.channels {
        if pc.dir == Direction::Send {
            let dest_count = manifest.instances(pc.peer)?;
            let mut sinks: Vec<Box<dyn FrameSink>> = Vec::new();
            for d in 0..dest_count {
                let entry = manifest.entry(pc.peer, d)?;
                let sink = connect_sink(&entry.addr, entry.port, pc.id, opts)?;
                sinks.push(Box::new(sink));
            }
            outbound.insert(pc.id, sinks);
        }
    }

    InstanceRuntime::new(plan, member, sizes, Endpoints { outbound, inbound })
}

/// Run one instance in this process, as the `worker` binary does: bind the
/// manifest port, meet the peers, execute the plan, return what it printed.
pub fn run_worker(
    plan: &LocationPlan,
    manifest: &Manifest,
    location: LocationId,
    member: u32,
    opts: &NetOptions,
) -> Result<Vec<String>, RunError> {
    if plan.location != location {
        return Err(RunError::Plan(format!(
            "plan is for {}, not {location}",
            plan.location
        )));
    }
    if member >= manifest.instances(location)? {
        return Err(RunError::Plan(format!(
            "{location} has no member {member}"
        )));
    }
    let entry = manifest.entry(location, member)?;
    let (listener, _) = bind_listener(&entry.addr, entry.port)?;
    let runtime = tcp_instance(plan, manifest, member, listener, opts)?;
    pump(runtime)
}

/// Push `messages` integer frames through one real socket, handshake and
/// framing included, and report sustained messages per second.
pub fn bench_channel(messages: u64) -> Result<f64, RunError> {
    let (listener, port) = bind_listener("127.0.0.1", 0)?;
    let opts = NetOptions::default();
    let sender = thread::spawn(move || -> Result<(), RunError> {
        let mut sink = connect_sink("127.0.0.1", port, ChannelId(0), &opts)?;
        for n in 0..messages {
            let bytes = codec::encode(&Value::Int(n as i64), &TypeTag::Int)?;
            sink.send(Frame::Data(bytes))?;
        }
        sink.send(Frame::Eos)?;
        sink.flush()?;
        Ok(())
    });

    let start = Instant::now();
    let sources = accept_inbound(listener, &[(ChannelId(0), 1)], &NetOptions::default())?;
    let (_, mut source) = sources.into_iter().next().expect("one channel");
    let mut received = 0u64;
    loop {
        match source.try_next()? {
            Some(Frame::Data(bytes)) => {
                codec::decode(&bytes, &TypeTag::Int)?;
                received += 1;
            }
            Some(Frame::Eos) => break,
            None => {}
        }
    }
    let elapsed = start.elapsed();
    sender
        .join()
        .map_err(|_| RunError::Transport("sender panicked".into()))??;
    if received != messages {
        return Err(RunError::Transport(format!(
            "expected {messages} messages, received {received}"
        )));
    }
    Ok(received as f64 / elapsed.as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{LocalhostCluster, LocalhostProcess};
    use crate::ir::FlowBuilder;
    use crate::q;
    use crate::runtime::oracle::{graph_cluster_sizes, run_oracle};

    fn pipeline_graph() -> FlowGraph {
        let flow = FlowBuilder::new();
        let p0 = flow.process(&LocalhostProcess);
        let p1 = flow.process(&LocalhostProcess);
        flow.source_iter(&p0, q!(0 .. 5))
            .unwrap()
            .filter(q!(|v| v > 2))
            .unwrap()
            .map(q!(|v| v * 2))
            .unwrap()
            .send(&p1)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        flow.finish().unwrap()
    }

    #[test]
    fn memory_and_tcp_match_the_oracle() {
        let graph = pipeline_graph();
        let oracle = run_oracle(&graph, &graph_cluster_sizes(&graph)).unwrap();
        let memory = run_distributed(&graph, Transport::Memory, 0).unwrap();
        let tcp = run_distributed(&graph, Transport::Tcp, 0).unwrap();
        assert_eq!(memory.instances, oracle.instances);
        assert_eq!(tcp.instances, oracle.instances);
    }

    #[test]
    fn cluster_traffic_flows_over_tcp() {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        let ids = flow.member_ids(&p, &c).unwrap();
        let data = flow.source_iter(&p, q!([1, 2, 3])).unwrap();
        ids.cross_product(&data)
            .unwrap()
            .send(&c)
            .unwrap()
            .fold(q!(0), q!(|acc, v| acc + v))
            .unwrap()
            .send(&p)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let graph = flow.finish().unwrap();
        let result = run_distributed(&graph, Transport::Tcp, 0).unwrap();
        let mut log = result.instances["process:0"].clone();
        log.sort();
        assert_eq!(log, vec!["(0, 6)", "(1, 6)"]);
    }
}
