//! The global dataflow graph.
//!
//! A flow is a DAG of operator nodes, each pinned to a location. Locations
//! are either a single process or a cluster of identical members; cluster
//! members all run the same slice of the graph. Edges within one location
//! carry values directly; edges that cross locations exist only as a paired
//! `NetworkSend`/`NetworkRecv` with a channel id and a wire codec.

mod build;

pub use build::{ClusterHandle, FlowBuilder, Location, ProcessHandle, Stream};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::deploy::HostSpec;
use crate::staging::{Quoted, TypeTag};

/// What kind of machine group a location is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocationKind {
    /// Exactly one instance.
    Process,
    /// A set of identical members; the slice runs once per member.
    Cluster,
}

impl LocationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationKind::Process => "process",
            LocationKind::Cluster => "cluster",
        }
    }
}

/// A location in the program: `process:0`, `cluster:1`, and so on. Indices
/// count per kind in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocationId {
    pub kind: LocationKind,
    pub index: u32,
}

impl LocationId {
    pub fn process(index: u32) -> LocationId {
        LocationId { kind: LocationKind::Process, index }
    }

    pub fn cluster(index: u32) -> LocationId {
        LocationId { kind: LocationKind::Cluster, index }
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.index)
    }
}

impl FromStr for LocationId {
    type Err = String;

    fn from_str(s: &str) -> Result<LocationId, String> {
        let (kind, index) = s
            .split_once(':')
            .ok_or_else(|| format!("expected kind:index, got {s:?}"))?;
        let kind = match kind {
            "process" => LocationKind::Process,
            "cluster" => LocationKind::Cluster,
            other => return Err(format!("unknown location kind {other:?}")),
        };
        let index = index
            .parse::<u32>()
            .map_err(|_| format!("bad location index {index:?}"))?;
        Ok(LocationId { kind, index })
    }
}

impl Serialize for LocationId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LocationId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<LocationId, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Graph-wide operator id, stable across slicing.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Graph-wide network channel id, shared by one send/recv pair.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ChannelId(pub u32);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// Communication shape of a channel, decided by the endpoint kinds.
///
/// Cluster-side fan-out and provenance are explicit in the element types:
/// sending into a cluster takes `(cid, T)` pairs addressed by member, and
/// receiving from a cluster yields `(cid, T)` pairs tagged with the sender.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::OneToOne => "one_to_one",
            Pattern::OneToMany => "one_to_many",
            Pattern::ManyToOne => "many_to_one",
            Pattern::ManyToMany => "many_to_many",
        }
    }

    pub fn for_kinds(src: LocationKind, dst: LocationKind) -> Pattern {
        match (src, dst) {
            (LocationKind::Process, LocationKind::Process) => Pattern::OneToOne,
            (LocationKind::Process, LocationKind::Cluster) => Pattern::OneToMany,
            (LocationKind::Cluster, LocationKind::Process) => Pattern::ManyToOne,
            (LocationKind::Cluster, LocationKind::Cluster) => Pattern::ManyToMany,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One operator. Payload logic is quoted so it can be shipped in plans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    /// Emit each element of the payload's list value, then end the stream.
    SourceIter { items: Quoted },
    Map { f: Quoted },
    Filter { pred: Quoted },
    /// Running accumulation; emits the final accumulator once, at end of
    /// input.
    Fold { init: Quoted, step: Quoted },
    /// Terminal effect per element.
    ForEach { f: Quoted },
    /// All pairs of (left, right), emitted at end of both inputs.
    CrossProduct,
    /// Equi-join on the first tuple field, emitted at end of both inputs.
    Join,
    /// Left elements that never appear on the right, emitted at end of both
    /// inputs, deduplicated, in first-occurrence order.
    Difference,
    /// Interleaved merge of both inputs.
    Union,
    NetworkSend { channel: ChannelId, pattern: Pattern, codec: TypeTag, peer: LocationId },
    NetworkRecv { channel: ChannelId, pattern: Pattern, codec: TypeTag, peer: LocationId },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::SourceIter { .. } => "source_iter",
            NodeKind::Map { .. } => "map",
            NodeKind::Filter { .. } => "filter",
            NodeKind::Fold { .. } => "fold",
            NodeKind::ForEach { .. } => "for_each",
            NodeKind::CrossProduct => "cross_product",
            NodeKind::Join => "join",
            NodeKind::Difference => "difference",
            NodeKind::Union => "union",
            NodeKind::NetworkSend { .. } => "network_send",
            NodeKind::NetworkRecv { .. } => "network_recv",
        }
    }

    /// How many input streams this operator consumes.
    pub fn input_arity(&self) -> usize {
        match self {
            NodeKind::SourceIter { .. } => 0,
            NodeKind::CrossProduct | NodeKind::Join | NodeKind::Difference | NodeKind::Union => 2,
            _ => 1,
        }
    }

    /// Whether this operator produces an output stream.
    pub fn has_output(&self) -> bool {
        !matches!(self, NodeKind::ForEach { .. } | NodeKind::NetworkSend { .. })
    }
}

/// A placed operator with its inferred element type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub location: LocationId,
    pub kind: NodeKind,
    /// Element type of the output stream; `Unit` for terminal operators.
    pub output_type: TypeTag,
}

/// Dataflow edge. `port` is 0 for the only/left input, 1 for the right input
/// of binary operators. The send-to-recv hop is also an edge; it is the only
/// kind allowed to span locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub port: u8,
}

/// How a location maps onto machines, fixed when the location is created.
#[derive(Debug, Clone)]
pub enum SpecBinding {
    Process(HostSpec),
    Cluster(Vec<HostSpec>),
}

/// The finished global dataflow graph: plain data, ready to validate, slice,
/// render, bind, or run.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    pub nodes: Vec<OperatorNode>,
    pub edges: Vec<Edge>,
    pub locations: Vec<(LocationId, SpecBinding)>,
}

impl FlowGraph {
    pub fn node(&self, id: NodeId) -> Option<&OperatorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Inputs of `id` ordered by port.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        let mut ins: Vec<(u8, NodeId)> = self
            .edges
            .iter()
            .filter(|e| e.to == id)
            .map(|e| (e.port, e.from))
            .collect();
        ins.sort();
        ins.into_iter().map(|(_, from)| from).collect()
    }

    pub fn location_ids(&self) -> Vec<LocationId> {
        self.locations.iter().map(|(id, _)| *id).collect()
    }

    pub fn binding(&self, id: LocationId) -> Option<&SpecBinding> {
        self.locations
            .iter()
            .find(|(loc, _)| *loc == id)
            .map(|(_, b)| b)
    }

    /// All send/recv pairs, ordered by channel id.
    pub fn channels(&self) -> Vec<ChannelRoute> {
        let mut routes = Vec::new();
        for node in &self.nodes {
            if let NodeKind::NetworkSend { channel, pattern, codec, peer } = &node.kind {
                routes.push(ChannelRoute {
                    channel: *channel,
                    pattern: *pattern,
                    codec: codec.clone(),
                    src: node.location,
                    dst: *peer,
                });
            }
        }
        routes.sort_by_key(|r| r.channel);
        routes
    }
}

/// One network channel, viewed whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRoute {
    pub channel: ChannelId,
    pub pattern: Pattern,
    pub codec: TypeTag,
    pub src: LocationId,
    pub dst: LocationId,
}
