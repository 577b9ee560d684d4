//! Error types, one enum per phase.
//!
//! Quoting problems surface while stage-one code runs ([`StageError`],
//! [`BuildError`]), structural problems surface when the graph is sliced
//! ([`ValidationError`]), and everything after that is a runtime failure of a
//! particular instance ([`RunError`]) or of deployment binding
//! ([`DeployError`]).

use std::time::Duration;

use thiserror::Error;

use crate::ir::{LocationId, NodeId};

/// Rejected staged source: parse failures, open variables, nested quoting.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StageError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    /// A free identifier survived capture splicing, so the expression would
    /// not mean anything on a remote machine.
    #[error("cannot quote free variable {0:?}; pass it as a capture")]
    UnquotableCapture(String),
    #[error("quoted code cannot itself quote")]
    NestedQuote,
}

/// Failed evaluation of staged code at runtime.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound identifier {0:?}")]
    Unbound(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("no size known for cluster {0}")]
    UnknownCluster(u32),
    #[error("self_id() outside a cluster member")]
    NoSelfId,
    #[error("wrong number of arguments: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },
}

/// Rejected graph construction. These fire at the call site while stage-one
/// code runs, where the backtrace still points at user code.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("streams live at {left}, {right}; move one across the network first")]
    LocationMismatch { left: LocationId, right: LocationId },
    /// Streams are linear: each may be consumed by exactly one operator.
    #[error("stream produced by node {0} is already consumed")]
    StreamConsumed(NodeId),
    #[error("send from {0} to itself needs no network")]
    SelfSend(LocationId),
    #[error("stream type does not fit this network pattern: {0}")]
    PatternType(String),
    #[error("operator type mismatch: {0}")]
    Type(String),
    #[error("stream belongs to a different flow")]
    ForeignStream,
    #[error(transparent)]
    Stage(#[from] StageError),
}

/// A structural defect found while validating or slicing a finished graph.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("validation failed at node {node}: {rule}")]
pub struct ValidationError {
    pub rule: String,
    pub node: NodeId,
}

/// Runtime failure of an instance or of the harness driving it.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RunError {
    #[error("cannot bind {addr}: {msg}")]
    Bind { addr: String, msg: String },
    #[error("peer did not complete channel handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("malformed frame: {0}")]
    Decode(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bad plan: {0}")]
    Plan(String),
    #[error("dataflow stalled: {0}")]
    Stalled(String),
}

/// Failure to bind a graph to concrete hosts and ports.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DeployError {
    #[error("location {0} has no deployment binding")]
    MissingBinding(LocationId),
    #[error("cluster {0} binds zero hosts")]
    EmptyCluster(LocationId),
    #[error("invalid host spec for {0}: {1}")]
    InvalidHost(LocationId, String),
}

/// Any failure from the library surface, for callers that do not care which
/// phase it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
