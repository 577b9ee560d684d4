//! Choreographed streaming dataflow.
//!
//! One program describes computation across many machines. Stage one runs
//! ordinary Rust that assembles a global dataflow graph, with every operator
//! pinned to an explicit location (a single process or a cluster of
//! identical members) and per-element logic captured as quoted expressions.
//! Stage two slices that graph by location into textual plans, renders it to
//! DOT, emits a deployment config, and executes it: either whole in one
//! process (the oracle) or as independent workers talking over
//! length-prefixed TCP.
//!
//! ```
//! use weft::ir::FlowBuilder;
//! use weft::deploy::{LocalhostCluster, LocalhostProcess};
//! use weft::q;
//!
//! let flow = FlowBuilder::new();
//! let p0 = flow.process(&LocalhostProcess);
//! let p1 = flow.process(&LocalhostProcess);
//! let doubled = flow
//!     .source_iter(&p0, q!(0 .. 5)).unwrap()
//!     .filter(q!(|v| v > 2)).unwrap()
//!     .map(q!(|v| v * 2)).unwrap()
//!     .send(&p1).unwrap();
//! doubled.for_each(q!(|v| print(v))).unwrap();
//! let graph = flow.finish().unwrap();
//! assert_eq!(graph.nodes.len(), 6);
//! # let _ = LocalhostCluster { size: 2 };
//! ```

pub mod compile;
pub mod deploy;
pub mod error;
pub mod ir;
pub mod programs;
pub mod runtime;
pub mod staging;

pub mod cli;

pub use error::Error;
pub use staging::{quote, quote_with, Quoted, Value};
