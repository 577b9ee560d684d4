//! Single-process reference execution.
//!
//! The oracle runs the whole graph in one thread: every instance of every
//! location becomes an [`InstanceRuntime`], and channels become in-memory
//! queues. Semantics match a distributed run exactly (same plans, same
//! interpreter, same codec discipline), which is the point: any program's
//! distributed output can be checked against its oracle output.
//!
//! Instances are stepped round-robin. A seed varies the starting instance
//! each round, reshuffling cross-instance interleavings; per-channel frame
//! order is preserved regardless, so anything the contracts promise is
//! seed-independent.
//!
//! Cluster sizes are a runtime input, passed explicitly. For graphs built
//! with localhost bindings, [`graph_cluster_sizes`] recovers the sizes the
//! builder fixed.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use super::codec::Frame;
use super::exec::{Endpoints, FrameSink, FrameSource, InstanceRuntime};
use super::manifest::instance_key;
use super::RunResult;
use crate::compile::compile;
use crate::error::RunError;
use crate::ir::{ChannelId, FlowGraph, LocationId, LocationKind, SpecBinding};
use crate::staging::eval::splitmix64;

type Queue = Rc<RefCell<VecDeque<Frame>>>;

struct QueueSink(Queue);

impl FrameSink for QueueSink {
    fn send(&mut self, frame: Frame) -> Result<(), RunError> {
        self.0.borrow_mut().push_back(frame);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), RunError> {
        Ok(())
    }
}

/// Merges one queue per sending instance, polled round-robin.
struct MergedQueueSource {
    queues: Vec<Queue>,
    next: usize,
}

impl FrameSource for MergedQueueSource {
    fn try_next(&mut self) -> Result<Option<Frame>, RunError> {
        for offset in 0..self.queues.len() {
            let i = (self.next + offset) % self.queues.len();
            if let Some(frame) = self.queues[i].borrow_mut().pop_front() {
                self.next = (i + 1) % self.queues.len();
                return Ok(Some(frame));
            }
        }
        Ok(None)
    }
}

/// Cluster sizes as fixed by the graph's bindings.
pub fn graph_cluster_sizes(graph: &FlowGraph) -> BTreeMap<u32, u32> {
    graph
        .locations
        .iter()
        .filter_map(|(loc, binding)| match binding {
            SpecBinding::Cluster(hosts) => Some((loc.index, hosts.len() as u32)),
            SpecBinding::Process(_) => None,
        })
        .collect()
}

fn instance_counts(
    graph: &FlowGraph,
    sizes: &BTreeMap<u32, u32>,
) -> Result<Vec<(LocationId, u32)>, RunError> {
    graph
        .locations
        .iter()
        .map(|(loc, _)| {
            let n = match loc.kind {
                LocationKind::Process => 1,
                LocationKind::Cluster => *sizes.get(&loc.index).ok_or_else(|| {
                    RunError::Plan(format!("no cluster size given for {loc}"))
                })?,
            };
            if n == 0 {
                return Err(RunError::Plan(format!("{loc} has size 0")));
            }
            Ok((*loc, n))
        })
        .collect()
}

/// Run the whole graph in this process, with the given cluster sizes (keyed
/// by cluster index), and collect each instance's output.
pub fn run_oracle(
    graph: &FlowGraph,
    sizes: &BTreeMap<u32, u32>,
) -> Result<RunResult, RunError> {
    run_oracle_seeded(graph, sizes, 0)
}

/// [`run_oracle`] with a chosen interleaving seed.
pub fn run_oracle_seeded(
    graph: &FlowGraph,
    sizes: &BTreeMap<u32, u32>,
    seed: u64,
) -> Result<RunResult, RunError> {
    let plans = compile(graph).map_err(|e| RunError::Plan(e.to_string()))?;
    let counts = instance_counts(graph, sizes)?;

    // One queue per (channel, sender instance, receiver instance).
    let mut queues: BTreeMap<(ChannelId, u32, u32), Queue> = BTreeMap::new();
    for route in graph.channels() {
        let senders = lookup_count(&counts, route.src);
        let receivers = lookup_count(&counts, route.dst);
        for s in 0..senders {
            for r in 0..receivers {
                queues.insert(
                    (route.channel, s, r),
                    Rc::new(RefCell::new(VecDeque::new())),
                );
            }
        }
    }

    let routes = graph.channels();
    let mut instances = Vec::new();
    for ((loc, members), plan) in counts.iter().zip(&plans) {
        for member in 0..*members {
            let mut outbound: BTreeMap<ChannelId, Vec<Box<dyn FrameSink>>> = BTreeMap::new();
            let mut inbound: BTreeMap<ChannelId, (Box<dyn FrameSource>, usize)> = BTreeMap::new();
            for route in &routes {
                if route.src == *loc {
                    let receivers = lookup_count(&counts, route.dst);
                    let sinks: Vec<Box<dyn FrameSink>> = (0..receivers)
                        .map(|r| {
                            Box::new(QueueSink(queues[&(route.channel, member, r)].clone()))
                                as Box<dyn FrameSink>
                        })
                        .collect();
                    outbound.insert(route.channel, sinks);
                }
                if route.dst == *loc {
                    let senders = lookup_count(&counts, route.src);
                    let source = MergedQueueSource {
                        queues: (0..senders)
                            .map(|s| queues[&(route.channel, s, member)].clone())
                            .collect(),
                        next: 0,
                    };
                    inbound.insert(
                        route.channel,
                        (Box::new(source) as Box<dyn FrameSource>, senders as usize),
                    );
                }
            }
            let runtime = InstanceRuntime::new(
                plan,
                member,
                sizes.clone(),
                Endpoints { outbound, inbound },
            )?;
            instances.push((instance_key(*loc, member), runtime));
        }
    }

    // Round-robin with a seed-rotated starting point each round.
    let n = instances.len();
    let mut round: u64 = 0;
    loop {
        if instances.iter().all(|(_, rt)| rt.is_done()) {
            break;
        }
        let start = if n == 0 { 0 } else { (splitmix64(seed ^ round) % n as u64) as usize };
        let mut progress = false;
        for offset in 0..n {
            let (_, rt) = &mut instances[(start + offset) % n];
            if !rt.is_done() {
                progress |= rt.step()?;
            }
        }
        if !progress {
            let stuck: Vec<&str> = instances
                .iter()
                .filter(|(_, rt)| !rt.is_done())
                .map(|(key, _)| key.as_str())
                .collect();
            return Err(RunError::Stalled(format!(
                "no instance can make progress; waiting: {}",
                stuck.join(", ")
            )));
        }
        round += 1;
    }

    Ok(RunResult {
        instances: instances
            .into_iter()
            .map(|(key, rt)| (key, rt.into_output()))
            .collect(),
    })
}

fn lookup_count(counts: &[(LocationId, u32)], loc: LocationId) -> u32 {
    counts
        .iter()
        .find(|(l, _)| *l == loc)
        .map(|(_, n)| *n)
        .expect("validated graphs only reference registered locations")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{LocalhostCluster, LocalhostProcess};
    use crate::ir::FlowBuilder;
    use crate::q;

    fn oracle(graph: &FlowGraph) -> RunResult {
        run_oracle(graph, &graph_cluster_sizes(graph)).unwrap()
    }

    #[test]
    fn pipeline_produces_ordered_output() {
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
        let result = oracle(&flow.finish().unwrap());
        assert_eq!(result.instances["process:1"], vec!["6", "8"]);
        assert_eq!(result.instances["process:0"], Vec::<String>::new());
    }

    #[test]
    fn fold_emits_once_at_end_of_stream() {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        flow.source_iter(&p, q!(1 .. 5))
            .unwrap()
            .fold(q!(0), q!(|acc, v| acc + v))
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let result = oracle(&flow.finish().unwrap());
        assert_eq!(result.instances["process:0"], vec!["10"]);
    }

    #[test]
    fn broadcast_reaches_every_member() {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let c = flow.cluster(&LocalhostCluster { size: 3 });
        let ids = flow.member_ids(&p, &c).unwrap();
        let data = flow.source_iter(&p, q!([10, 20])).unwrap();
        ids.cross_product(&data)
            .unwrap()
            .send(&c)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let result = oracle(&flow.finish().unwrap());
        for member in 0..3 {
            let key = format!("cluster:0:m{member}");
            assert_eq!(result.instances[&key], vec!["10", "20"], "member {member}");
        }
    }

    #[test]
    fn cluster_to_process_tags_senders() {
        let flow = FlowBuilder::new();
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        let p = flow.process(&LocalhostProcess);
        flow.self_id_source(&c)
            .unwrap()
            .map(q!(|v| 100))
            .unwrap()
            .send(&p)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let result = oracle(&flow.finish().unwrap());
        let mut log = result.instances["process:0"].clone();
        log.sort();
        assert_eq!(log, vec!["(0, 100)", "(1, 100)"]);
    }

    #[test]
    fn join_difference_union_have_multiset_semantics() {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let left = flow
            .source_iter(&p, q!([("a", 1), ("b", 2), ("a", 3)]))
            .unwrap();
        let right = flow.source_iter(&p, q!([("a", 10), ("c", 30)])).unwrap();
        left.join(&right)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();

        let d_left = flow.source_iter(&p, q!([1, 2, 2, 3])).unwrap();
        let d_right = flow.source_iter(&p, q!([2])).unwrap();
        d_left
            .difference(&d_right)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();

        let result = oracle(&flow.finish().unwrap());
        let log = &result.instances["process:0"];
        // Join is a bag (two "a" matches), difference deduplicates.
        assert!(log.contains(&"(\"a\", (1, 10))".to_string()));
        assert!(log.contains(&"(\"a\", (3, 10))".to_string()));
        assert!(log.contains(&"1".to_string()));
        assert!(log.contains(&"3".to_string()));
        assert!(!log.contains(&"2".to_string()));
        assert!(!log.contains(&"(\"b\", (2, 10))".to_string()));
    }

    #[test]
    fn seeds_change_interleaving_but_not_multisets() {
        let build = || {
            let flow = FlowBuilder::new();
            let c = flow.cluster(&LocalhostCluster { size: 3 });
            let p = flow.process(&LocalhostProcess);
            flow.self_id_source(&c)
                .unwrap()
                .send(&p)
                .unwrap()
                .for_each(q!(|v| print(v)))
                .unwrap();
            flow.finish().unwrap()
        };
        let mut sorted_runs = Vec::new();
        for seed in 0..5 {
            let graph = build();
            let result =
                run_oracle_seeded(&graph, &graph_cluster_sizes(&graph), seed).unwrap();
            let mut log = result.instances["process:0"].clone();
            log.sort();
            sorted_runs.push(log);
        }
        for run in &sorted_runs {
            assert_eq!(run, &sorted_runs[0]);
        }
    }
}
