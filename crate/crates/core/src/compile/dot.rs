//! Graphviz rendering of the global graph.
//!
//! Each location becomes a boxed subgraph, local edges are solid, and
//! network hops are dashed and labeled with their channel and pattern.
//! Output is deterministic for a given graph.

use super::is_network_edge;
use crate::ir::{FlowGraph, NodeKind};

pub fn emit_dot(graph: &FlowGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph flow {\n");
    out.push_str("  rankdir=LR;\n");
    for (loc, _) in &graph.locations {
        // The cluster_ prefix is what makes Graphviz draw the box.
        out.push_str(&format!(
            "  subgraph cluster_{}_{} {{\n",
            loc.kind.as_str(),
            loc.index
        ));
        out.push_str(&format!("    label=\"{loc}\";\n"));
        for node in graph.nodes.iter().filter(|n| n.location == *loc) {
            out.push_str(&format!("    {} [label=\"{} {}\"];\n", node.id, node.id, node.kind.name()));
        }
        out.push_str("  }\n");
    }
    let mut edges: Vec<_> = graph.edges.iter().collect();
    edges.sort_by_key(|e| (e.from, e.to, e.port));
    for edge in edges {
        if is_network_edge(graph, edge) {
            let label = match graph.node(edge.from).map(|n| &n.kind) {
                Some(NodeKind::NetworkSend { channel, pattern, .. }) => {
                    format!("{channel} {pattern}")
                }
                _ => String::new(),
            };
            out.push_str(&format!(
                "  {} -> {} [style=dashed, label=\"{label}\"];\n",
                edge.from, edge.to
            ));
        } else {
            out.push_str(&format!("  {} -> {};\n", edge.from, edge.to));
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{LocalhostCluster, LocalhostProcess};
    use crate::ir::FlowBuilder;
    use crate::q;

    #[test]
    fn dot_shows_locations_as_boxes_and_channels_dashed() {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        flow.source_iter(&p, q!([(cid(0), 1)]))
            .unwrap()
            .send(&c)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let dot = emit_dot(&flow.finish().unwrap());
        assert!(dot.starts_with("digraph flow {\n"));
        assert!(dot.contains("subgraph cluster_process_0 {"));
        assert!(dot.contains("subgraph cluster_cluster_0 {"));
        assert!(dot.contains("label=\"process:0\";"));
        assert!(dot.contains("n0 [label=\"n0 source_iter\"];"));
        assert!(dot.contains("n1 -> n2 [style=dashed, label=\"ch0 one_to_many\"];"));
        assert!(dot.contains("  n0 -> n1;\n"));
        assert!(dot.ends_with("}\n"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let build = || {
            let flow = FlowBuilder::new();
            let p0 = flow.process(&LocalhostProcess);
            let p1 = flow.process(&LocalhostProcess);
            flow.source_iter(&p0, q!(0 .. 3))
                .unwrap()
                .send(&p1)
                .unwrap()
                .for_each(q!(|v| print(v)))
                .unwrap();
            emit_dot(&flow.finish().unwrap())
        };
        assert_eq!(build(), build());
    }
}
