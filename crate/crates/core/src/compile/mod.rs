//! Stage two, first half: checking and slicing the global graph.
//!
//! Validation re-checks everything the builder promised, so graphs arriving
//! by any other road (tests, future frontends) face the same rules. Slicing
//! splits the graph by location into self-contained plans that a worker can
//! execute knowing nothing about other locations except its channels.

pub mod dot;
pub mod plan;

pub use dot::emit_dot;
pub use plan::{parse_plan, LocationPlan, PlanChannel, PlanNode};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::ValidationError;
use crate::ir::{ChannelId, Edge, FlowGraph, LocationId, NodeId, NodeKind, Pattern};

fn fail(node: NodeId, rule: impl Into<String>) -> ValidationError {
    ValidationError { rule: rule.into(), node }
}

/// Is this edge the send-to-recv hop of a network channel?
///
/// Only these edges may span locations, and (for cluster self-sends) even a
/// same-location one still routes through the channel rather than handing
/// values over directly.
pub fn is_network_edge(graph: &FlowGraph, edge: &Edge) -> bool {
    let from = graph.node(edge.from).map(|n| &n.kind);
    let to = graph.node(edge.to).map(|n| &n.kind);
    matches!(
        (from, to),
        (Some(NodeKind::NetworkSend { .. }), Some(NodeKind::NetworkRecv { .. }))
    )
}

/// Check every structural invariant of a finished graph.
pub fn validate(graph: &FlowGraph) -> Result<(), ValidationError> {
    let registered: BTreeSet<LocationId> = graph.location_ids().into_iter().collect();
    let ids: BTreeSet<NodeId> = graph.nodes.iter().map(|n| n.id).collect();
    if ids.len() != graph.nodes.len() {
        let dup = graph
            .nodes
            .iter()
            .enumerate()
            .find(|(i, n)| graph.nodes[..*i].iter().any(|m| m.id == n.id))
            .map(|(_, n)| n.id)
            .unwrap_or(NodeId(0));
        return Err(fail(dup, "duplicate node id"));
    }

    for node in &graph.nodes {
        if !registered.contains(&node.location) {
            return Err(fail(node.id, format!("location {} is not registered", node.location)));
        }
    }

    for edge in &graph.edges {
        let Some(from) = graph.node(edge.from) else {
            return Err(fail(edge.to, format!("edge from unknown node {}", edge.from)));
        };
        let Some(to) = graph.node(edge.to) else {
            return Err(fail(edge.from, format!("edge to unknown node {}", edge.to)));
        };
        if is_network_edge(graph, edge) {
            continue;
        }
        if from.location != to.location {
            return Err(fail(
                edge.to,
                format!(
                    "edge {} -> {} crosses locations {} -> {} without a channel",
                    edge.from, edge.to, from.location, to.location
                ),
            ));
        }
        if matches!(from.kind, NodeKind::NetworkSend { .. }) {
            return Err(fail(edge.to, "network_send output must feed its network_recv"));
        }
    }

    // Input arity, with ports 0..arity each used once.
    for node in &graph.nodes {
        let mut ports: Vec<u8> = graph
            .edges
            .iter()
            .filter(|e| e.to == node.id)
            .map(|e| e.port)
            .collect();
        ports.sort_unstable();
        let want: Vec<u8> = (0..node.kind.input_arity() as u8).collect();
        if ports != want {
            return Err(fail(
                node.id,
                format!(
                    "{} wants {} input(s), has ports {:?}",
                    node.kind.name(),
                    node.kind.input_arity(),
                    ports
                ),
            ));
        }
    }

    // Linear streams: no node's output is consumed twice.
    for node in &graph.nodes {
        let out_degree = graph.edges.iter().filter(|e| e.from == node.id).count();
        if out_degree > 1 {
            return Err(fail(node.id, format!("output consumed {out_degree} times")));
        }
        if !node.kind.has_output() && !matches!(node.kind, NodeKind::NetworkSend { .. }) && out_degree != 0 {
            return Err(fail(node.id, "terminal operator has a consumer"));
        }
        if matches!(node.kind, NodeKind::NetworkSend { .. }) && out_degree != 1 {
            return Err(fail(node.id, "network_send must feed exactly one network_recv"));
        }
    }

    validate_channels(graph)?;
    validate_acyclic(graph)?;
    Ok(())
}

fn validate_channels(graph: &FlowGraph) -> Result<(), ValidationError> {
    let mut sides: BTreeMap<ChannelId, (Vec<NodeId>, Vec<NodeId>)> = BTreeMap::new();
    for node in &graph.nodes {
        match &node.kind {
            NodeKind::NetworkSend { channel, .. } => {
                sides.entry(*channel).or_default().0.push(node.id)
            }
            NodeKind::NetworkRecv { channel, .. } => {
                sides.entry(*channel).or_default().1.push(node.id)
            }
            _ => {}
        }
    }
    for (channel, (sends, recvs)) in sides {
        let (send_id, recv_id) = match (sends.as_slice(), recvs.as_slice()) {
            ([s], [r]) => (*s, *r),
            _ => {
                let node = *sends.first().or(recvs.first()).expect("channel has an endpoint");
                return Err(fail(
                    node,
                    format!(
                        "{channel} needs exactly one send and one recv, has {} and {}",
                        sends.len(),
                        recvs.len()
                    ),
                ));
            }
        };
        let send = graph.node(send_id).expect("send exists");
        let recv = graph.node(recv_id).expect("recv exists");
        let NodeKind::NetworkSend { pattern: sp, codec: sc, peer: speer, .. } = &send.kind else {
            unreachable!()
        };
        let NodeKind::NetworkRecv { pattern: rp, codec: rc, peer: rpeer, .. } = &recv.kind else {
            unreachable!()
        };
        if sp != rp {
            return Err(fail(send_id, format!("{channel} pattern mismatch: {sp} vs {rp}")));
        }
        if sc != rc {
            return Err(fail(send_id, format!("{channel} codec mismatch: {sc} vs {rc}")));
        }
        if *speer != recv.location || *rpeer != send.location {
            return Err(fail(send_id, format!("{channel} peers disagree with endpoints")));
        }
        let expect = Pattern::for_kinds(send.location.kind, recv.location.kind);
        if *sp != expect {
            return Err(fail(
                send_id,
                format!(
                    "{channel} is {sp} but {} -> {} needs {expect}",
                    send.location, recv.location
                ),
            ));
        }
        if !sc.is_wire() {
            return Err(fail(send_id, format!("{channel} codec {sc} is not a wire type")));
        }
        if !graph
            .edges
            .iter()
            .any(|e| e.from == send_id && e.to == recv_id)
        {
            return Err(fail(send_id, format!("{channel} endpoints are not linked")));
        }
    }
    Ok(())
}

fn validate_acyclic(graph: &FlowGraph) -> Result<(), ValidationError> {
    let mut indegree: BTreeMap<NodeId, usize> =
        graph.nodes.iter().map(|n| (n.id, 0)).collect();
    for edge in &graph.edges {
        *indegree.get_mut(&edge.to).expect("edge endpoints checked") += 1;
    }
    let mut ready: Vec<NodeId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut seen = 0usize;
    while let Some(id) = ready.pop() {
        seen += 1;
        for edge in graph.edges.iter().filter(|e| e.from == id) {
            let d = indegree.get_mut(&edge.to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(edge.to);
            }
        }
    }
    if seen != graph.nodes.len() {
        let stuck = indegree
            .iter()
            .filter(|(_, d)| **d > 0)
            .map(|(id, _)| *id)
            .min()
            .unwrap();
        return Err(fail(stuck, "graph contains a cycle"));
    }
    Ok(())
}

/// Validate the graph and slice it into one plan per location, in location
/// creation order.
///
/// Node order within a plan is a topological sort of the location's local
/// edges with smallest-node-id tie-breaking, so output is deterministic.
pub fn compile(graph: &FlowGraph) -> Result<Vec<LocationPlan>, ValidationError> {
    validate(graph)?;
    graph
        .location_ids()
        .into_iter()
        .map(|loc| slice_location(graph, loc))
        .collect()
}

fn slice_location(graph: &FlowGraph, loc: LocationId) -> Result<LocationPlan, ValidationError> {
    let local: BTreeSet<NodeId> = graph
        .nodes
        .iter()
        .filter(|n| n.location == loc)
        .map(|n| n.id)
        .collect();
    let local_edges: Vec<&Edge> = graph
        .edges
        .iter()
        .filter(|e| {
            local.contains(&e.from) && local.contains(&e.to) && !is_network_edge(graph, e)
        })
        .collect();

    let mut indegree: BTreeMap<NodeId, usize> = local.iter().map(|id| (*id, 0)).collect();
    for edge in &local_edges {
        *indegree.get_mut(&edge.to).unwrap() += 1;
    }
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| std::cmp::Reverse(*id))
        .collect();

    let mut nodes = Vec::new();
    while let Some(std::cmp::Reverse(id)) = heap.pop() {
        let node = graph.node(id).expect("local node exists");
        nodes.push(plan::plan_node(graph, node));
        for edge in local_edges.iter().filter(|e| e.from == id) {
            let d = indegree.get_mut(&edge.to).unwrap();
            *d -= 1;
            if *d == 0 {
                heap.push(std::cmp::Reverse(edge.to));
            }
        }
    }
    if nodes.len() != local.len() {
        let stuck = *local.iter().next().unwrap();
        return Err(fail(stuck, "location slice contains a cycle"));
    }

    let mut channels = Vec::new();
    for node in graph.nodes.iter().filter(|n| n.location == loc) {
        match &node.kind {
            NodeKind::NetworkSend { channel, pattern, codec, peer } => {
                channels.push(PlanChannel {
                    id: *channel,
                    dir: plan::Direction::Send,
                    pattern: *pattern,
                    codec: codec.clone(),
                    peer: *peer,
                    node: node.id,
                });
            }
            NodeKind::NetworkRecv { channel, pattern, codec, peer } => {
                channels.push(PlanChannel {
                    id: *channel,
                    dir: plan::Direction::Recv,
                    pattern: *pattern,
                    codec: codec.clone(),
                    peer: *peer,
                    node: node.id,
                });
            }
            _ => {}
        }
    }
    channels.sort_by_key(|c| (c.id, c.dir));

    Ok(LocationPlan { location: loc, nodes, channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{LocalhostCluster, LocalhostProcess};
    use crate::ir::{FlowBuilder, OperatorNode};
    use crate::q;
    use crate::staging::TypeTag;

    fn pipeline() -> FlowGraph {
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
    fn valid_graphs_pass() {
        validate(&pipeline()).unwrap();
    }

    #[test]
    fn cross_location_edges_without_channels_fail() {
        let mut graph = pipeline();
        // Rewrite the recv's location so the network edge stays intact but a
        // downstream local edge now crosses locations.
        let recv_id = graph
            .nodes
            .iter()
            .find(|n| matches!(n.kind, NodeKind::NetworkRecv { .. }))
            .unwrap()
            .id;
        for node in &mut graph.nodes {
            if node.id == recv_id {
                node.location = LocationId::process(0);
            }
        }
        let err = validate(&graph).unwrap_err();
        assert!(err.rule.contains("crosses locations") || err.rule.contains("peers"));
    }

    #[test]
    fn cycles_are_reported() {
        // Two maps feeding each other: arity and out-degree both check out,
        // so only cycle detection can reject this.
        let map = |id: u32| OperatorNode {
            id: NodeId(id),
            location: LocationId::process(0),
            kind: NodeKind::Map { f: crate::quote("|v| v").unwrap() },
            output_type: TypeTag::Int,
        };
        let graph = FlowGraph {
            nodes: vec![map(0), map(1)],
            edges: vec![
                Edge { from: NodeId(0), to: NodeId(1), port: 0 },
                Edge { from: NodeId(1), to: NodeId(0), port: 0 },
            ],
            locations: vec![(
                LocationId::process(0),
                crate::ir::SpecBinding::Process(crate::deploy::HostSpec::Localhost),
            )],
        };
        let err = validate(&graph).unwrap_err();
        assert!(err.rule.contains("cycle"), "got: {}", err.rule);
    }

    #[test]
    fn duplicate_consumption_is_caught() {
        let mut graph = pipeline();
        graph.nodes.push(OperatorNode {
            id: NodeId(100),
            location: LocationId::process(0),
            kind: NodeKind::Map { f: crate::quote("|v| v").unwrap() },
            output_type: TypeTag::Int,
        });
        graph.edges.push(Edge { from: NodeId(0), to: NodeId(100), port: 0 });
        let err = validate(&graph).unwrap_err();
        assert_eq!(err.node, NodeId(0));
        assert!(err.rule.contains("consumed"));
    }

    #[test]
    fn slices_cover_every_node_once() {
        let graph = pipeline();
        let plans = compile(&graph).unwrap();
        assert_eq!(plans.len(), 2);
        let total: usize = plans.iter().map(|p| p.nodes.len()).sum();
        assert_eq!(total, graph.nodes.len());
        // Sender slice: source, filter, map, send. Receiver: recv, for_each.
        assert_eq!(plans[0].nodes.len(), 4);
        assert_eq!(plans[1].nodes.len(), 2);
        assert_eq!(plans[0].channels.len(), 1);
        assert_eq!(plans[1].channels.len(), 1);
    }

    #[test]
    fn cluster_self_send_slices_to_one_plan_with_both_ends() {
        let flow = FlowBuilder::new();
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        let ids = flow.self_id_source(&c).unwrap();
        ids.map(q!(|v| (v, v)))
            .unwrap()
            .send(&c)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let plans = compile(&flow.finish().unwrap()).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].channels.len(), 2);
        assert_eq!(plans[0].channels[0].dir, plan::Direction::Send);
        assert_eq!(plans[0].channels[1].dir, plan::Direction::Recv);
    }
}
