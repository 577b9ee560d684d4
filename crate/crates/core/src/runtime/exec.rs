//! The per-instance interpreter.
//!
//! An [`InstanceRuntime`] executes one location plan for one instance (a
//! process, or a single cluster member). It is transport-agnostic: frames
//! arrive through [`FrameSource`]s and leave through [`FrameSink`]s, which
//! the caller wires to in-memory queues or TCP connections. The runtime owns
//! everything else: evaluating staged expressions, operator state, and
//! end-of-stream bookkeeping.
//!
//! Streams are finite. Every stream ends with an end-of-stream marker, and
//! operators that must see all input before emitting (fold, join,
//! cross_product, difference) release their output when their inputs end.
//! A network receive ends once every peer instance's marker has arrived.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::codec::{decode, encode, Frame};
use crate::compile::plan::{Direction, LocationPlan};
use crate::error::{EvalError, RunError};
use crate::ir::{ChannelId, LocationKind, NodeId, Pattern};
use crate::staging::expr::Expr;
use crate::staging::{eval, parse, TypeTag, Value};

/// Frames flowing out toward one peer instance.
pub trait FrameSink {
    fn send(&mut self, frame: Frame) -> Result<(), RunError>;
    fn flush(&mut self) -> Result<(), RunError>;
}

/// Frames flowing in from all peer instances of one channel, merged.
///
/// `try_next` may wait briefly but must not block indefinitely; `None` means
/// nothing is available right now.
pub trait FrameSource {
    fn try_next(&mut self) -> Result<Option<Frame>, RunError>;
}

/// Transport endpoints for one instance, keyed by channel.
///
/// Send channels carry one sink per receiving instance (index = member id,
/// a single entry for a process peer). Receive channels carry one merged
/// source plus the number of sending instances, which is how many
/// end-of-stream markers to expect.
pub struct Endpoints {
    pub outbound: BTreeMap<ChannelId, Vec<Box<dyn FrameSink>>>,
    pub inbound: BTreeMap<ChannelId, (Box<dyn FrameSource>, usize)>,
}

/// Frames polled from one inbound channel per step, so one busy peer cannot
/// starve the others.
const RECV_CHUNK: usize = 256;

enum Op {
    SourceIter { items: Expr },
    Map { f: Expr },
    Filter { pred: Expr },
    Fold { step: Expr, acc: Option<Value> },
    ForEach { f: Expr },
    Cross { left: Vec<Value>, right: Vec<Value> },
    Join { left: Vec<Value>, right: Vec<Value> },
    Difference { left: Vec<Value>, right: BTreeSet<Value> },
    Union,
    Send { channel: ChannelId, pattern: Pattern },
    Recv,
}

struct ExecNode {
    id: NodeId,
    op: Op,
    /// Where output goes: (node index, input port). `None` drops output.
    downstream: Option<(usize, u8)>,
    /// End-of-stream markers still expected before this node completes.
    eos_pending: usize,
    done: bool,
}

struct SendChannel {
    codec: TypeTag,
    sinks: Vec<Box<dyn FrameSink>>,
}

struct RecvChannel {
    codec: TypeTag,
    source: Box<dyn FrameSource>,
    remaining_eos: usize,
    node: usize,
}

enum Work {
    Data { node: usize, port: u8, value: Value },
    Eos { node: usize },
}

/// One running instance.
pub struct InstanceRuntime {
    nodes: Vec<ExecNode>,
    sends: BTreeMap<ChannelId, SendChannel>,
    recvs: BTreeMap<ChannelId, RecvChannel>,
    ctx: eval::EvalContext,
    queue: VecDeque<Work>,
    sources_drained: bool,
    self_member: Option<u32>,
}

impl InstanceRuntime {
    /// Wire up a plan for one instance. `member` is ignored for process
    /// locations; for clusters it selects which member this instance is.
    pub fn new(
        plan: &LocationPlan,
        member: u32,
        cluster_sizes: BTreeMap<u32, u32>,
        endpoints: Endpoints,
    ) -> Result<InstanceRuntime, RunError> {
        let self_member = match plan.location.kind {
            LocationKind::Cluster => Some(member),
            LocationKind::Process => None,
        };
        let mut ctx = eval::EvalContext::new(cluster_sizes);
        ctx.self_member = self_member;

        let index_of: BTreeMap<NodeId, usize> = plan
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();

        let mut nodes = Vec::with_capacity(plan.nodes.len());
        for pn in &plan.nodes {
            let exprs: Result<Vec<Expr>, RunError> = pn
                .exprs
                .iter()
                .map(|src| {
                    parse::parse(src)
                        .map_err(|e| RunError::Plan(format!("node {}: {e}", pn.id)))
                })
                .collect();
            let mut exprs = exprs?.into_iter();
            let mut next_expr = |what: &str| {
                exprs
                    .next()
                    .ok_or_else(|| RunError::Plan(format!("node {}: missing {what} expr", pn.id)))
            };
            let op = match pn.kind.as_str() {
                "source_iter" => Op::SourceIter { items: next_expr("items")? },
                "map" => Op::Map { f: next_expr("map")? },
                "filter" => Op::Filter { pred: next_expr("filter")? },
                "fold" => {
                    let init = next_expr("init")?;
                    let step = next_expr("step")?;
                    let acc = eval::eval_call(&init, &[], &mut ctx)?;
                    Op::Fold { step, acc: Some(acc) }
                }
                "for_each" => Op::ForEach { f: next_expr("for_each")? },
                "cross_product" => Op::Cross { left: Vec::new(), right: Vec::new() },
                "join" => Op::Join { left: Vec::new(), right: Vec::new() },
                "difference" => Op::Difference { left: Vec::new(), right: BTreeSet::new() },
                "union" => Op::Union,
                "network_send" => {
                    let channel = pn
                        .channel
                        .ok_or_else(|| RunError::Plan(format!("node {}: send without channel", pn.id)))?;
                    let pattern = pn
                        .pattern
                        .ok_or_else(|| RunError::Plan(format!("node {}: send without pattern", pn.id)))?;
                    Op::Send { channel, pattern }
                }
                "network_recv" => Op::Recv,
                other => {
                    return Err(RunError::Plan(format!("node {}: unknown kind {other:?}", pn.id)))
                }
            };
            let eos_pending = match &op {
                Op::Cross { .. } | Op::Join { .. } | Op::Difference { .. } | Op::Union => 2,
                _ => 1,
            };
            nodes.push(ExecNode { id: pn.id, op, downstream: None, eos_pending, done: false });
        }

        // Invert the input lists into downstream pointers.
        for (idx, pn) in plan.nodes.iter().enumerate() {
            for (port, input) in pn.inputs.iter().enumerate() {
                let src = *index_of
                    .get(input)
                    .ok_or_else(|| RunError::Plan(format!("node {} is not in this plan", input)))?;
                if nodes[src].downstream.is_some() {
                    return Err(RunError::Plan(format!("node {} consumed twice", input)));
                }
                nodes[src].downstream = Some((idx, port as u8));
            }
        }

        let Endpoints { mut outbound, mut inbound } = endpoints;
        let mut sends = BTreeMap::new();
        let mut recvs = BTreeMap::new();
        for pc in &plan.channels {
            match pc.dir {
                Direction::Send => {
                    let sinks = outbound.remove(&pc.id).ok_or_else(|| {
                        RunError::Plan(format!("no outbound endpoint for {}", pc.id))
                    })?;
                    let single_dest = matches!(pc.pattern, Pattern::OneToOne | Pattern::ManyToOne);
                    if single_dest && sinks.len() != 1 {
                        return Err(RunError::Plan(format!(
                            "{} targets one instance, got {} sinks",
                            pc.id,
                            sinks.len()
                        )));
                    }
                    sends.insert(pc.id, SendChannel { codec: pc.codec.clone(), sinks });
                }
                Direction::Recv => {
                    let (source, senders) = inbound.remove(&pc.id).ok_or_else(|| {
                        RunError::Plan(format!("no inbound endpoint for {}", pc.id))
                    })?;
                    let node = *index_of.get(&pc.node).ok_or_else(|| {
                        RunError::Plan(format!("{} recv node missing", pc.id))
                    })?;
                    recvs.insert(
                        pc.id,
                        RecvChannel {
                            codec: pc.codec.clone(),
                            source,
                            remaining_eos: senders,
                            node,
                        },
                    );
                }
            }
        }

        Ok(InstanceRuntime {
            nodes,
            sends,
            recvs,
            ctx,
            queue: VecDeque::new(),
            sources_drained: false,
            self_member,
        })
    }

    /// All operators have ended and nothing is left in flight here.
    pub fn is_done(&self) -> bool {
        self.queue.is_empty() && self.nodes.iter().all(|n| n.done)
    }

    /// Everything printed so far, in order.
    pub fn output(&self) -> &[String] {
        &self.ctx.output
    }

    pub fn into_output(self) -> Vec<String> {
        self.ctx.output
    }

    /// One scheduling round: drain sources (first call only), poll each
    /// inbound channel, and flush outbound buffers. Returns whether any
    /// progress happened, for the caller's stall detection.
    pub fn step(&mut self) -> Result<bool, RunError> {
        let mut progress = false;
        if !self.sources_drained {
            self.sources_drained = true;
            progress = true;
            for idx in 0..self.nodes.len() {
                if let Op::SourceIter { items } = &self.nodes[idx].op {
                    let value = eval::eval_call(items, &[], &mut self.ctx)?;
                    let Value::List(elements) = value else {
                        return Err(RunError::Eval(EvalError::Type(format!(
                            "source produced {value}, not a list"
                        ))));
                    };
                    for element in elements {
                        self.queue.push_back(Work::Data { node: idx, port: 0, value: element });
                    }
                    self.queue.push_back(Work::Eos { node: idx });
                }
            }
            self.run_queue()?;
        }

        let channels: Vec<ChannelId> = self.recvs.keys().copied().collect();
        for id in channels {
            for _ in 0..RECV_CHUNK {
                let recv = self.recvs.get_mut(&id).expect("channel exists");
                if recv.remaining_eos == 0 {
                    break;
                }
                match recv.source.try_next()? {
                    None => break,
                    Some(Frame::Data(bytes)) => {
                        let value = decode(&bytes, &recv.codec)
                            .map_err(|e| RunError::Decode(format!("{id}: {e}")))?;
                        let node = recv.node;
                        self.queue.push_back(Work::Data { node, port: 0, value });
                        progress = true;
                    }
                    Some(Frame::Eos) => {
                        recv.remaining_eos -= 1;
                        progress = true;
                        if recv.remaining_eos == 0 {
                            let node = recv.node;
                            self.queue.push_back(Work::Eos { node });
                        }
                    }
                }
            }
            self.run_queue()?;
        }

        for send in self.sends.values_mut() {
            for sink in &mut send.sinks {
                sink.flush()?;
            }
        }
        Ok(progress)
    }

    fn run_queue(&mut self) -> Result<(), RunError> {
        while let Some(work) = self.queue.pop_front() {
            match work {
                Work::Data { node, port, value } => self.on_data(node, port, value)?,
                Work::Eos { node } => self.on_eos(node)?,
            }
        }
        Ok(())
    }

    fn emit(&mut self, from: usize, value: Value) {
        if let Some((node, port)) = self.nodes[from].downstream {
            self.queue.push_back(Work::Data { node, port, value });
        }
    }

    fn emit_eos(&mut self, from: usize) {
        if let Some((node, _)) = self.nodes[from].downstream {
            self.queue.push_back(Work::Eos { node });
        }
    }

    fn on_data(&mut self, idx: usize, port: u8, value: Value) -> Result<(), RunError> {
        match &mut self.nodes[idx].op {
            Op::SourceIter { .. } => {
                // Source elements are queued against the source itself so
                // they swap into the normal emit path here.
                self.emit(idx, value);
            }
            Op::Map { f } => {
                let f = f.clone();
                let out = eval::eval_call(&f, &[value], &mut self.ctx)?;
                self.emit(idx, out);
            }
            Op::Filter { pred } => {
                let pred = pred.clone();
                match eval::eval_call(&pred, std::slice::from_ref(&value), &mut self.ctx)? {
                    Value::Bool(true) => self.emit(idx, value),
                    Value::Bool(false) => {}
                    other => {
                        return Err(RunError::Eval(EvalError::Type(format!(
                            "filter returned {other}, not a bool"
                        ))))
                    }
                }
            }
            Op::Fold { step, acc } => {
                let step = step.clone();
                let prev = acc.take().expect("fold accumulator present");
                let next = eval::eval_call(&step, &[prev, value], &mut self.ctx)?;
                if let Op::Fold { acc, .. } = &mut self.nodes[idx].op {
                    *acc = Some(next);
                }
            }
            Op::ForEach { f } => {
                let f = f.clone();
                eval::eval_call(&f, &[value], &mut self.ctx)?;
            }
            Op::Cross { left, right } | Op::Join { left, right } => {
                if port == 0 {
                    left.push(value);
                } else {
                    right.push(value);
                }
            }
            Op::Difference { left, right } => {
                if port == 0 {
                    left.push(value);
                } else {
                    right.insert(value);
                }
            }
            Op::Union => self.emit(idx, value),
            Op::Send { channel, pattern } => {
                let (channel, pattern) = (*channel, *pattern);
                self.send_value(channel, pattern, value)?;
            }
            Op::Recv => self.emit(idx, value),
        }
        Ok(())
    }

    fn send_value(
        &mut self,
        channel: ChannelId,
        pattern: Pattern,
        value: Value,
    ) -> Result<(), RunError> {
        let member = self.self_member;
        let send = self
            .sends
            .get_mut(&channel)
            .ok_or_else(|| RunError::Plan(format!("{channel} has no send endpoint")))?;
        // Route and re-shape per the channel pattern: strip the destination
        // address when sending into a cluster, attach our own member id when
        // sending from one.
        let (dest, wire_value) = match pattern {
            Pattern::OneToOne => (0usize, value),
            Pattern::OneToMany => {
                let (dest, payload) = split_addressed(value)?;
                (dest, payload)
            }
            Pattern::ManyToOne => {
                let member = member.ok_or_else(|| {
                    RunError::Plan(format!("{channel} sends from a cluster, but no member id is set"))
                })?;
                (0usize, Value::pair(Value::ClusterId(member), value))
            }
            Pattern::ManyToMany => {
                let member = member.ok_or_else(|| {
                    RunError::Plan(format!("{channel} sends from a cluster, but no member id is set"))
                })?;
                let (dest, payload) = split_addressed(value)?;
                (dest, Value::pair(Value::ClusterId(member), payload))
            }
        };
        if dest >= send.sinks.len() {
            return Err(RunError::Transport(format!(
                "{channel} addressed member {dest}, but the peer has {} instance(s)",
                send.sinks.len()
            )));
        }
        let bytes = encode(&wire_value, &send.codec)?;
        send.sinks[dest].send(Frame::Data(bytes))
    }

    fn on_eos(&mut self, idx: usize) -> Result<(), RunError> {
        enum Completion {
            Flush(Vec<Value>),
            CloseChannel(ChannelId),
        }
        let completion = {
            let node = &mut self.nodes[idx];
            if node.done {
                return Err(RunError::Plan(format!(
                    "node {} saw end-of-stream after completing",
                    node.id
                )));
            }
            node.eos_pending -= 1;
            if node.eos_pending > 0 {
                return Ok(());
            }
            node.done = true;
            // Operators that buffer release everything now, in a fixed
            // order: folds their accumulator, cross products and joins
            // left-major, differences in first-occurrence order.
            match &mut node.op {
                Op::Fold { acc, .. } => {
                    Completion::Flush(vec![acc.take().expect("fold accumulator present")])
                }
                Op::Cross { left, right } => {
                    let (left, right) = (std::mem::take(left), std::mem::take(right));
                    let mut out = Vec::with_capacity(left.len() * right.len());
                    for l in &left {
                        for r in &right {
                            out.push(Value::pair(l.clone(), r.clone()));
                        }
                    }
                    Completion::Flush(out)
                }
                Op::Join { left, right } => {
                    let (left, right) = (std::mem::take(left), std::mem::take(right));
                    let mut out = Vec::new();
                    for l in &left {
                        let (lk, lv) = split_pair(l)?;
                        for r in &right {
                            let (rk, rv) = split_pair(r)?;
                            if lk == rk {
                                out.push(Value::pair(
                                    lk.clone(),
                                    Value::pair(lv.clone(), rv.clone()),
                                ));
                            }
                        }
                    }
                    Completion::Flush(out)
                }
                Op::Difference { left, right } => {
                    let (left, right) = (std::mem::take(left), std::mem::take(right));
                    let mut emitted = BTreeSet::new();
                    let mut out = Vec::new();
                    for l in left {
                        if !right.contains(&l) && emitted.insert(l.clone()) {
                            out.push(l);
                        }
                    }
                    Completion::Flush(out)
                }
                Op::Send { channel, .. } => Completion::CloseChannel(*channel),
                Op::SourceIter { .. } | Op::Map { .. } | Op::Filter { .. }
                | Op::ForEach { .. } | Op::Union | Op::Recv => Completion::Flush(Vec::new()),
            }
        };
        match completion {
            Completion::Flush(values) => {
                for value in values {
                    self.emit(idx, value);
                }
                self.emit_eos(idx);
            }
            Completion::CloseChannel(channel) => {
                let send = self
                    .sends
                    .get_mut(&channel)
                    .ok_or_else(|| RunError::Plan(format!("{channel} has no send endpoint")))?;
                for sink in &mut send.sinks {
                    sink.send(Frame::Eos)?;
                    sink.flush()?;
                }
            }
        }
        Ok(())
    }
}

fn split_addressed(value: Value) -> Result<(usize, Value), RunError> {
    let Value::Tuple(mut items) = value else {
        return Err(RunError::Eval(EvalError::Type(
            "cluster-bound values must be (cid, payload) pairs".into(),
        )));
    };
    if items.len() != 2 {
        return Err(RunError::Eval(EvalError::Type(
            "cluster-bound values must be (cid, payload) pairs".into(),
        )));
    }
    let payload = items.pop().expect("len checked");
    match items.pop().expect("len checked") {
        Value::ClusterId(m) => Ok((m as usize, payload)),
        other => Err(RunError::Eval(EvalError::Type(format!(
            "cluster address must be a cid, got {other}"
        )))),
    }
}

fn split_pair(value: &Value) -> Result<(&Value, &Value), RunError> {
    match value {
        Value::Tuple(items) if items.len() == 2 => Ok((&items[0], &items[1])),
        other => Err(RunError::Eval(EvalError::Type(format!(
            "join inputs must be (key, value) pairs, got {other}"
        )))),
    }
}
