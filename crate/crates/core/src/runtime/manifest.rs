//! The deployment manifest: who listens where.
//!
//! Workers discover peers from this file rather than from any coordination
//! service. The format is stable JSON:
//!
//! ```json
//! {
//!   "locations": [
//!     {"kind": "process", "index": 0, "member": 0, "addr": "127.0.0.1", "port": 35000},
//!     {"kind": "cluster", "index": 0, "member": 0, "addr": "127.0.0.1", "port": 35001},
//!     {"kind": "cluster", "index": 0, "member": 1, "addr": "127.0.0.1", "port": 35002}
//!   ],
//!   "cluster_sizes": {"0": 2}
//! }
//! ```
//!
//! Processes have a single entry with `member` 0; clusters have one entry
//! per member. `cluster_sizes` is keyed by cluster index and must agree with
//! the entries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::ir::{FlowGraph, LocationId, LocationKind, SpecBinding};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: String,
    pub index: u32,
    pub member: u32,
    pub addr: String,
    pub port: u16,
}

impl ManifestEntry {
    pub fn location(&self) -> Result<LocationId, RunError> {
        let kind = match self.kind.as_str() {
            "process" => LocationKind::Process,
            "cluster" => LocationKind::Cluster,
            other => return Err(RunError::Plan(format!("bad manifest kind {other:?}"))),
        };
        Ok(LocationId { kind, index: self.index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub locations: Vec<ManifestEntry>,
    pub cluster_sizes: BTreeMap<String, u32>,
}

impl Manifest {
    /// A localhost manifest for `graph` with ports counted up from
    /// `base_port` in location creation order.
    pub fn local(graph: &FlowGraph, base_port: u16) -> Manifest {
        let mut locations = Vec::new();
        let mut cluster_sizes = BTreeMap::new();
        let mut port = base_port;
        for (loc, binding) in &graph.locations {
            let members = match binding {
                SpecBinding::Process(_) => 1,
                SpecBinding::Cluster(hosts) => {
                    cluster_sizes.insert(loc.index.to_string(), hosts.len() as u32);
                    hosts.len() as u32
                }
            };
            for member in 0..members {
                locations.push(ManifestEntry {
                    kind: loc.kind.as_str().to_string(),
                    index: loc.index,
                    member,
                    addr: "127.0.0.1".to_string(),
                    port,
                });
                port += 1;
            }
        }
        Manifest { locations, cluster_sizes }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Manifest, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Plan(format!("bad manifest: {e}")))
    }

    pub fn entry(&self, loc: LocationId, member: u32) -> Result<&ManifestEntry, RunError> {
        self.locations
            .iter()
            .find(|e| e.kind == loc.kind.as_str() && e.index == loc.index && e.member == member)
            .ok_or_else(|| {
                RunError::Plan(format!("manifest has no entry for {loc} member {member}"))
            })
    }

    /// Instance count at a location: 1 for processes, the cluster size
    /// otherwise.
    pub fn instances(&self, loc: LocationId) -> Result<u32, RunError> {
        match loc.kind {
            LocationKind::Process => Ok(1),
            LocationKind::Cluster => self
                .cluster_sizes
                .get(&loc.index.to_string())
                .copied()
                .ok_or_else(|| RunError::Plan(format!("manifest has no size for {loc}"))),
        }
    }

    /// Cluster sizes keyed by index, as the evaluator wants them.
    pub fn sizes_by_index(&self) -> Result<BTreeMap<u32, u32>, RunError> {
        self.cluster_sizes
            .iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|idx| (idx, *v))
                    .map_err(|_| RunError::Plan(format!("bad cluster index {k:?} in manifest")))
            })
            .collect()
    }

    /// Every (location, member) pair, in manifest order.
    pub fn instance_ids(&self) -> Result<Vec<(LocationId, u32)>, RunError> {
        self.locations
            .iter()
            .map(|e| e.location().map(|loc| (loc, e.member)))
            .collect()
    }
}

/// Stable key naming one running instance: `process:0`, or `cluster:1:m2`
/// for member 2 of cluster 1.
pub fn instance_key(loc: LocationId, member: u32) -> String {
    match loc.kind {
        LocationKind::Process => loc.to_string(),
        LocationKind::Cluster => format!("{loc}:m{member}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{LocalhostCluster, LocalhostProcess};
    use crate::ir::FlowBuilder;
    use crate::q;

    fn graph() -> FlowGraph {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        flow.source_iter(&p, q!([(cid(0), 1)]))
            .unwrap()
            .send(&c)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        flow.finish().unwrap()
    }

    #[test]
    fn local_manifest_counts_ports_in_creation_order() {
        let m = Manifest::local(&graph(), 35000);
        assert_eq!(m.locations.len(), 3);
        assert_eq!(m.locations[0].port, 35000);
        assert_eq!(m.locations[2].member, 1);
        assert_eq!(m.instances(LocationId::cluster(0)).unwrap(), 2);
        assert_eq!(m.sizes_by_index().unwrap(), [(0, 2)].into());
    }

    #[test]
    fn json_shape_is_stable() {
        let m = Manifest::local(&graph(), 35000);
        let json = m.to_json();
        assert!(json.contains("\"kind\": \"process\""));
        assert!(json.contains("\"cluster_sizes\""));
        let back = Manifest::from_json(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn instance_keys_name_members() {
        assert_eq!(instance_key(LocationId::process(0), 0), "process:0");
        assert_eq!(instance_key(LocationId::cluster(1), 2), "cluster:1:m2");
    }
}
