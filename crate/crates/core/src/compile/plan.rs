//! Location plans: the per-location slice of the graph, as text.
//!
//! A plan file is line-oriented so it stays reviewable in a diff and trivial
//! to parse anywhere:
//!
//! ```text
//! # location plan v1
//! # location: process:1
//! # nodes: 2
//! # channels: 1
//! node {"id":4,"kind":"network_recv","loc":"process:1",...}
//! channel {"id":0,"dir":"recv","pattern":"one_to_one",...}
//! ```
//!
//! `#` lines are commentary for humans; the payload of each `node` and
//! `channel` line is one JSON object. Nodes appear in execution order
//! (topological, smallest node id first), channels sorted by id with the
//! send side before the recv side. Emission is deterministic: the same graph
//! always yields byte-identical plans.

use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::ir::{ChannelId, FlowGraph, LocationId, NodeId, NodeKind, OperatorNode, Pattern};
use crate::staging::TypeTag;

/// Which end of a channel this location holds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Send,
    Recv,
}

/// One operator, as carried by a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: NodeId,
    pub kind: String,
    pub loc: LocationId,
    /// Local input node ids in port order. Empty for sources and receives.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<NodeId>,
    /// Canonical source text of the operator's quoted payloads, in operator
    /// order (`fold` carries `[init, step]`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exprs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Pattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec: Option<TypeTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<LocationId>,
}

/// One channel endpoint this location participates in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanChannel {
    pub id: ChannelId,
    pub dir: Direction,
    pub pattern: Pattern,
    pub codec: TypeTag,
    pub peer: LocationId,
    pub node: NodeId,
}

/// Everything one location needs to run its part of the program.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationPlan {
    pub location: LocationId,
    pub nodes: Vec<PlanNode>,
    pub channels: Vec<PlanChannel>,
}

impl LocationPlan {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# location plan v1\n");
        out.push_str(&format!("# location: {}\n", self.location));
        out.push_str(&format!("# nodes: {}\n", self.nodes.len()));
        out.push_str(&format!("# channels: {}\n", self.channels.len()));
        for node in &self.nodes {
            out.push_str("node ");
            out.push_str(&serde_json::to_string(node).expect("plan node serializes"));
            out.push('\n');
        }
        for channel in &self.channels {
            out.push_str("channel ");
            out.push_str(&serde_json::to_string(channel).expect("plan channel serializes"));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn plan_node(graph: &FlowGraph, node: &OperatorNode) -> PlanNode {
    let inputs = match node.kind {
        // A receive's input arrives over its channel, not a local edge.
        NodeKind::NetworkRecv { .. } => Vec::new(),
        _ => graph.inputs(node.id),
    };
    let mut plan = PlanNode {
        id: node.id,
        kind: node.kind.name().to_string(),
        loc: node.location,
        inputs,
        exprs: Vec::new(),
        channel: None,
        pattern: None,
        codec: None,
        peer: None,
    };
    match &node.kind {
        NodeKind::SourceIter { items } => plan.exprs.push(items.source_text().to_string()),
        NodeKind::Map { f } | NodeKind::ForEach { f } => {
            plan.exprs.push(f.source_text().to_string())
        }
        NodeKind::Filter { pred } => plan.exprs.push(pred.source_text().to_string()),
        NodeKind::Fold { init, step } => {
            plan.exprs.push(init.source_text().to_string());
            plan.exprs.push(step.source_text().to_string());
        }
        NodeKind::CrossProduct | NodeKind::Join | NodeKind::Difference | NodeKind::Union => {}
        NodeKind::NetworkSend { channel, pattern, codec, peer }
        | NodeKind::NetworkRecv { channel, pattern, codec, peer } => {
            plan.channel = Some(*channel);
            plan.pattern = Some(*pattern);
            plan.codec = Some(codec.clone());
            plan.peer = Some(*peer);
        }
    }
    plan
}

/// Parse a plan emitted by [`LocationPlan::to_text`].
pub fn parse_plan(text: &str) -> Result<LocationPlan, RunError> {
    let mut location = None;
    let mut nodes = Vec::new();
    let mut channels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| RunError::Plan(format!("line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(loc) = rest.trim().strip_prefix("location:") {
                location = Some(
                    loc.trim()
                        .parse::<LocationId>()
                        .map_err(|e| bad(format!("bad location: {e}")))?,
                );
            }
            continue;
        }
        if let Some(json) = line.strip_prefix("node ") {
            let node: PlanNode =
                serde_json::from_str(json).map_err(|e| bad(format!("bad node: {e}")))?;
            nodes.push(node);
        } else if let Some(json) = line.strip_prefix("channel ") {
            let channel: PlanChannel =
                serde_json::from_str(json).map_err(|e| bad(format!("bad channel: {e}")))?;
            channels.push(channel);
        } else {
            return Err(bad(format!("unrecognized line: {line:?}")));
        }
    }
    let location = location.ok_or_else(|| RunError::Plan("missing location header".into()))?;
    if nodes.is_empty() {
        return Err(RunError::Plan("plan has no nodes".into()));
    }
    Ok(LocationPlan { location, nodes, channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::deploy::LocalhostProcess;
    use crate::ir::FlowBuilder;
    use crate::q;

    fn plans() -> Vec<LocationPlan> {
        let flow = FlowBuilder::new();
        let p0 = flow.process(&LocalhostProcess);
        let p1 = flow.process(&LocalhostProcess);
        flow.source_iter(&p0, q!(0 .. 5))
            .unwrap()
            .filter(q!(|v| v > 2))
            .unwrap()
            .send(&p1)
            .unwrap()
            .fold(q!(0), q!(|acc, v| acc + v))
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        compile(&flow.finish().unwrap()).unwrap()
    }

    #[test]
    fn text_roundtrips_exactly() {
        for plan in plans() {
            let text = plan.to_text();
            let parsed = parse_plan(&text).unwrap();
            assert_eq!(parsed, plan);
            assert_eq!(parsed.to_text(), text);
        }
    }

    #[test]
    fn node_lines_carry_canonical_source_text() {
        let plans = plans();
        let text = plans[0].to_text();
        assert!(text.contains("\"exprs\":[\"0 .. 5\"]"), "plan was:\n{text}");
        assert!(text.contains("\"exprs\":[\"|v| v > 2\"]"), "plan was:\n{text}");
        let fold_line = plans[1]
            .nodes
            .iter()
            .find(|n| n.kind == "fold")
            .expect("fold lands on the receiver");
        assert_eq!(fold_line.exprs, vec!["0", "|acc, v| acc + v"]);
    }

    #[test]
    fn header_counts_match_body() {
        for plan in plans() {
            let text = plan.to_text();
            assert!(text.starts_with("# location plan v1\n"));
            assert!(text.contains(&format!("# nodes: {}\n", plan.nodes.len())));
            assert!(text.contains(&format!("# channels: {}\n", plan.channels.len())));
        }
    }

    #[test]
    fn malformed_plans_are_rejected() {
        assert!(matches!(parse_plan(""), Err(RunError::Plan(_))));
        assert!(matches!(
            parse_plan("# location: process:0\nnode {\"bad\": true}\n"),
            Err(RunError::Plan(_))
        ));
        assert!(matches!(
            parse_plan("# location: nowhere:0\nnode {}\n"),
            Err(RunError::Plan(_))
        ));
    }
}
