//! Stage-one graph construction.
//!
//! A [`FlowBuilder`] accumulates the global graph while ordinary Rust runs.
//! [`Stream`] values are handles into it: linear (each consumed exactly
//! once), pinned to a location, and carrying the inferred element type.
//! Mistakes that would only surface at deploy time in a looser design are
//! rejected here, at the call site: reusing a stream, combining streams from
//! different locations without a network hop, shipping a type that has no
//! wire encoding.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use super::{
    ChannelId, Edge, FlowGraph, LocationId, LocationKind, NodeId, NodeKind, OperatorNode,
    Pattern, SpecBinding,
};
use crate::deploy::{ClusterSpec, ProcessSpec};
use crate::error::{BuildError, ValidationError};
use crate::staging::expr::Expr;
use crate::staging::{eval, Quoted, TypeTag};

#[doc(hidden)]
pub struct GraphInner {
    nodes: Vec<OperatorNode>,
    edges: Vec<Edge>,
    locations: Vec<(LocationId, SpecBinding)>,
    consumed: BTreeSet<NodeId>,
    process_count: u32,
    cluster_count: u32,
    channel_count: u32,
}

/// Builds one global dataflow graph.
#[derive(Clone)]
pub struct FlowBuilder {
    inner: Rc<RefCell<GraphInner>>,
}

impl Default for FlowBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowBuilder {
    pub fn new() -> FlowBuilder {
        FlowBuilder {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                edges: Vec::new(),
                locations: Vec::new(),
                consumed: BTreeSet::new(),
                process_count: 0,
                cluster_count: 0,
                channel_count: 0,
            })),
        }
    }

    /// Register a single-instance location.
    pub fn process(&self, spec: &dyn ProcessSpec) -> ProcessHandle {
        let mut inner = self.inner.borrow_mut();
        let id = LocationId::process(inner.process_count);
        inner.process_count += 1;
        inner.locations.push((id, SpecBinding::Process(spec.host())));
        ProcessHandle { graph: self.inner.clone(), id }
    }

    /// Register a cluster location; `spec` fixes its size at registration.
    pub fn cluster(&self, spec: &dyn ClusterSpec) -> ClusterHandle {
        let mut inner = self.inner.borrow_mut();
        let id = LocationId::cluster(inner.cluster_count);
        inner.cluster_count += 1;
        let hosts = spec.hosts();
        let size = hosts.len() as u32;
        inner.locations.push((id, SpecBinding::Cluster(hosts)));
        ClusterHandle { graph: self.inner.clone(), id, size }
    }

    /// A source that emits each element of `items` (which must evaluate to a
    /// list) and then ends. On a cluster, every member emits the same list.
    pub fn source_iter(
        &self,
        at: &impl Location,
        items: Quoted,
    ) -> Result<Stream, BuildError> {
        self.check_same_flow(at.graph())?;
        if items.arity() != 0 {
            return Err(BuildError::Type(
                "source_iter takes a value expression, not a lambda".into(),
            ));
        }
        let elem = match eval::infer_result(items.expr(), &[]) {
            Ok(TypeTag::List(elem)) => *elem,
            Ok(other) => {
                return Err(BuildError::Type(format!(
                    "source_iter needs a list, got {other}"
                )))
            }
            Err(e) => return Err(BuildError::Type(e.to_string())),
        };
        Ok(self.push_node(at.location_id(), NodeKind::SourceIter { items }, elem, &[]))
    }

    /// A source at `at` listing every member id of `of`, in order.
    pub fn member_ids(
        &self,
        at: &impl Location,
        of: &ClusterHandle,
    ) -> Result<Stream, BuildError> {
        self.check_same_flow(at.graph())?;
        self.check_same_flow(&of.graph)?;
        let items = Quoted::from_expr(Expr::Call(
            "cluster_ids".into(),
            vec![Expr::Int(i64::from(of.id.index))],
        ));
        Ok(self.push_node(
            at.location_id(),
            NodeKind::SourceIter { items },
            TypeTag::ClusterId,
            &[],
        ))
    }

    /// A source on a cluster where each member emits its own id, once.
    pub fn self_id_source(&self, at: &ClusterHandle) -> Result<Stream, BuildError> {
        self.check_same_flow(&at.graph)?;
        let items = Quoted::from_expr(Expr::Call("self_id".into(), Vec::new()));
        Ok(self.push_node(at.id, NodeKind::SourceIter { items }, TypeTag::ClusterId, &[]))
    }

    /// Validate and return the finished graph.
    pub fn finish(&self) -> Result<FlowGraph, ValidationError> {
        let inner = self.inner.borrow();
        let graph = FlowGraph {
            nodes: inner.nodes.clone(),
            edges: inner.edges.clone(),
            locations: inner.locations.clone(),
        };
        crate::compile::validate(&graph)?;
        Ok(graph)
    }

    fn check_same_flow(&self, other: &Rc<RefCell<GraphInner>>) -> Result<(), BuildError> {
        if Rc::ptr_eq(&self.inner, other) {
            Ok(())
        } else {
            Err(BuildError::ForeignStream)
        }
    }

    fn push_node(
        &self,
        location: LocationId,
        kind: NodeKind,
        output_type: TypeTag,
        inputs: &[NodeId],
    ) -> Stream {
        let mut inner = self.inner.borrow_mut();
        let id = NodeId(inner.nodes.len() as u32);
        for (port, from) in inputs.iter().enumerate() {
            inner.edges.push(Edge { from: *from, to: id, port: port as u8 });
            inner.consumed.insert(*from);
        }
        inner.nodes.push(OperatorNode { id, location, kind, output_type: output_type.clone() });
        Stream { graph: self.inner.clone(), node: id, location, elem: output_type }
    }
}

/// Where an operator can be placed.
pub trait Location {
    fn location_id(&self) -> LocationId;
    #[doc(hidden)]
    fn graph(&self) -> &Rc<RefCell<GraphInner>>;
}

/// Handle to a registered single-process location.
#[derive(Clone)]
pub struct ProcessHandle {
    graph: Rc<RefCell<GraphInner>>,
    id: LocationId,
}

impl Location for ProcessHandle {
    fn location_id(&self) -> LocationId {
        self.id
    }

    fn graph(&self) -> &Rc<RefCell<GraphInner>> {
        &self.graph
    }
}

/// Handle to a registered cluster location.
#[derive(Clone)]
pub struct ClusterHandle {
    graph: Rc<RefCell<GraphInner>>,
    id: LocationId,
    size: u32,
}

impl ClusterHandle {
    pub fn size(&self) -> u32 {
        self.size
    }
}

impl Location for ClusterHandle {
    fn location_id(&self) -> LocationId {
        self.id
    }

    fn graph(&self) -> &Rc<RefCell<GraphInner>> {
        &self.graph
    }
}

/// A typed, placed, linear stream of values.
pub struct Stream {
    graph: Rc<RefCell<GraphInner>>,
    node: NodeId,
    location: LocationId,
    elem: TypeTag,
}

impl std::fmt::Debug for Stream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stream")
            .field("node", &self.node)
            .field("location", &self.location)
            .field("elem", &self.elem)
            .finish_non_exhaustive()
    }
}

impl Stream {
    pub fn location(&self) -> LocationId {
        self.location
    }

    pub fn element_type(&self) -> &TypeTag {
        &self.elem
    }

    /// The node that produces this stream.
    pub fn node_id(&self) -> NodeId {
        self.node
    }

    pub fn map(&self, f: Quoted) -> Result<Stream, BuildError> {
        let out = self.infer_unary(&f, "map")?;
        self.chain(NodeKind::Map { f }, out)
    }

    pub fn filter(&self, pred: Quoted) -> Result<Stream, BuildError> {
        let out = self.infer_unary(&pred, "filter")?;
        if out.unify(&TypeTag::Bool).is_none() {
            return Err(BuildError::Type(format!(
                "filter predicate must return bool, returns {out}"
            )));
        }
        let elem = self.elem.clone();
        self.chain(NodeKind::Filter { pred }, elem)
    }

    /// Accumulate every element into `init`, emitting the final accumulator
    /// once when the input ends.
    pub fn fold(&self, init: Quoted, step: Quoted) -> Result<Stream, BuildError> {
        if init.arity() != 0 {
            return Err(BuildError::Type("fold init takes no arguments".into()));
        }
        let acc = eval::infer_result(init.expr(), &[])
            .map_err(|e| BuildError::Type(format!("fold init: {e}")))?;
        if step.arity() != 2 {
            return Err(BuildError::Type(format!(
                "fold step takes (acc, element), got arity {}",
                step.arity()
            )));
        }
        let out = eval::infer_result(step.expr(), &[acc.clone(), self.elem.clone()])
            .map_err(|e| BuildError::Type(format!("fold step: {e}")))?;
        let acc = acc.unify(&out).ok_or_else(|| {
            BuildError::Type(format!(
                "fold step returns {out}, but the accumulator is {acc}"
            ))
        })?;
        self.chain(NodeKind::Fold { init, step }, acc)
    }

    /// Terminal: run `f` on every element for its effect.
    pub fn for_each(&self, f: Quoted) -> Result<(), BuildError> {
        self.infer_unary(&f, "for_each")?;
        self.chain(NodeKind::ForEach { f }, TypeTag::Unit)?;
        Ok(())
    }

    /// All pairs (left, right). Both inputs are buffered to the end, so the
    /// output is a multiset with left-major order.
    pub fn cross_product(&self, other: &Stream) -> Result<Stream, BuildError> {
        self.check_binary(other)?;
        let out = TypeTag::pair(self.elem.clone(), other.elem.clone());
        self.chain_binary(other, NodeKind::CrossProduct, out)
    }

    /// Equi-join on the first tuple field: `(k, a)` joined with `(k, b)`
    /// yields `(k, (a, b))`.
    pub fn join(&self, other: &Stream) -> Result<Stream, BuildError> {
        self.check_binary(other)?;
        let (lk, lv) = split_pair(&self.elem)
            .ok_or_else(|| BuildError::Type(format!("join left side is {}, not a pair", self.elem)))?;
        let (rk, rv) = split_pair(&other.elem)
            .ok_or_else(|| BuildError::Type(format!("join right side is {}, not a pair", other.elem)))?;
        let key = lk.unify(rk).ok_or_else(|| {
            BuildError::Type(format!("join keys disagree: {lk} vs {rk}"))
        })?;
        let out = TypeTag::pair(key, TypeTag::pair(lv.clone(), rv.clone()));
        self.chain_binary(other, NodeKind::Join, out)
    }

    /// Elements of the left input that never occur in the right input,
    /// deduplicated, in first-occurrence order, emitted at end of input.
    pub fn difference(&self, other: &Stream) -> Result<Stream, BuildError> {
        self.check_binary(other)?;
        let elem = self.elem.unify(&other.elem).ok_or_else(|| {
            BuildError::Type(format!(
                "difference needs equal element types, got {} and {}",
                self.elem, other.elem
            ))
        })?;
        self.chain_binary(other, NodeKind::Difference, elem)
    }

    /// Merge both inputs. Order across inputs is not specified; treat the
    /// result as a multiset unless it stays on one process.
    pub fn union(&self, other: &Stream) -> Result<Stream, BuildError> {
        self.check_binary(other)?;
        let elem = self.elem.unify(&other.elem).ok_or_else(|| {
            BuildError::Type(format!(
                "union needs equal element types, got {} and {}",
                self.elem, other.elem
            ))
        })?;
        self.chain_binary(other, NodeKind::Union, elem)
    }

    /// Ship this stream to another location, returning the received stream.
    ///
    /// The channel's shape follows the endpoint kinds. Sending into a
    /// cluster consumes `(cid, t)` pairs addressed by member id and delivers
    /// bare `t`; receiving from a cluster delivers `(cid, t)` tagged with the
    /// sender. A cluster may send to itself (members exchange values); a
    /// process sending to itself is rejected.
    pub fn send(&self, dest: &impl Location) -> Result<Stream, BuildError> {
        if !Rc::ptr_eq(&self.graph, dest.graph()) {
            return Err(BuildError::ForeignStream);
        }
        let src = self.location;
        let dst = dest.location_id();
        if src == dst && src.kind == LocationKind::Process {
            return Err(BuildError::SelfSend(src));
        }
        let pattern = Pattern::for_kinds(src.kind, dst.kind);
        // Wire type and delivered type per pattern. Sending toward a cluster
        // strips the address; receiving from a cluster attaches the sender.
        let (codec, delivered) = match pattern {
            Pattern::OneToOne => (self.elem.clone(), self.elem.clone()),
            Pattern::OneToMany => {
                let payload = self.addressed_payload()?;
                (payload.clone(), payload)
            }
            Pattern::ManyToOne => {
                let tagged = TypeTag::pair(TypeTag::ClusterId, self.elem.clone());
                (tagged.clone(), tagged)
            }
            Pattern::ManyToMany => {
                let payload = self.addressed_payload()?;
                let tagged = TypeTag::pair(TypeTag::ClusterId, payload);
                (tagged.clone(), tagged)
            }
        };
        if !codec.is_wire() {
            return Err(BuildError::PatternType(format!(
                "{codec} has no wire encoding; only ints, bools, strings, \
                 cluster ids, and tuples of those can cross the network"
            )));
        }
        let builder = FlowBuilder { inner: self.graph.clone() };
        let channel = {
            let mut inner = self.graph.borrow_mut();
            let id = ChannelId(inner.channel_count);
            inner.channel_count += 1;
            id
        };
        self.consume()?;
        let send = builder.push_node(
            src,
            NodeKind::NetworkSend { channel, pattern, codec: codec.clone(), peer: dst },
            TypeTag::Unit,
            &[self.node],
        );
        let recv = builder.push_node(
            dst,
            NodeKind::NetworkRecv { channel, pattern, codec, peer: src },
            delivered,
            &[send.node],
        );
        Ok(recv)
    }

    /// For sends whose input must be `(cid, t)`: the payload type `t`.
    fn addressed_payload(&self) -> Result<TypeTag, BuildError> {
        let (addr, payload) = split_pair(&self.elem).ok_or_else(|| {
            BuildError::PatternType(format!(
                "sending into a cluster takes (cid, payload) pairs, got {}",
                self.elem
            ))
        })?;
        if addr.unify(&TypeTag::ClusterId).is_none() {
            return Err(BuildError::PatternType(format!(
                "cluster addresses must be cids, got {addr}"
            )));
        }
        Ok(payload.clone())
    }

    fn infer_unary(&self, f: &Quoted, what: &str) -> Result<TypeTag, BuildError> {
        if f.arity() != 1 {
            return Err(BuildError::Type(format!(
                "{what} takes a one-parameter lambda, got arity {}",
                f.arity()
            )));
        }
        eval::infer_result(f.expr(), std::slice::from_ref(&self.elem))
            .map_err(|e| BuildError::Type(format!("{what}: {e}")))
    }

    fn check_binary(&self, other: &Stream) -> Result<(), BuildError> {
        if !Rc::ptr_eq(&self.graph, &other.graph) {
            return Err(BuildError::ForeignStream);
        }
        if self.location != other.location {
            return Err(BuildError::LocationMismatch {
                left: self.location,
                right: other.location,
            });
        }
        Ok(())
    }

    fn consume(&self) -> Result<(), BuildError> {
        let inner = self.graph.borrow();
        if inner.consumed.contains(&self.node) {
            return Err(BuildError::StreamConsumed(self.node));
        }
        Ok(())
    }

    fn chain(&self, kind: NodeKind, out: TypeTag) -> Result<Stream, BuildError> {
        self.consume()?;
        let builder = FlowBuilder { inner: self.graph.clone() };
        Ok(builder.push_node(self.location, kind, out, &[self.node]))
    }

    fn chain_binary(
        &self,
        other: &Stream,
        kind: NodeKind,
        out: TypeTag,
    ) -> Result<Stream, BuildError> {
        self.consume()?;
        other.consume()?;
        if self.node == other.node {
            return Err(BuildError::StreamConsumed(self.node));
        }
        let builder = FlowBuilder { inner: self.graph.clone() };
        Ok(builder.push_node(self.location, kind, out, &[self.node, other.node]))
    }
}

fn split_pair(tag: &TypeTag) -> Option<(&TypeTag, &TypeTag)> {
    match tag {
        TypeTag::Tuple(items) if items.len() == 2 => Some((&items[0], &items[1])),
        _ => None,
    }
}
