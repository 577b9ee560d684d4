//! Deployment binding: from abstract locations to concrete machines.
//!
//! Stage-one code declares *where* things run only abstractly (process,
//! cluster). Specs supply the machines. Binding a finished graph produces two
//! artifacts: a deployment config describing every machine and the exact
//! network rules its channels need, and a manifest the runtime uses for
//! address lookup. The config is emitted for an external provisioner to
//! consume; nothing here talks to a cloud API.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::DeployError;
use crate::ir::{FlowGraph, LocationId, LocationKind, SpecBinding};
use crate::runtime::manifest::{Manifest, ManifestEntry};

/// Base data port used when no other is requested.
pub const DEFAULT_BASE_PORT: u16 = 35000;

/// Offset between an instance's data port and its control port.
const CONTROL_PORT_OFFSET: u16 = 10000;

/// A concrete machine a location instance runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostSpec {
    Localhost,
    /// A cloud VM request: machine type, boot image, region. Only recorded
    /// in the config; nothing is provisioned from here.
    CloudMachine { machine_type: String, image: String, region: String },
}

/// Supplies the host for a process location.
pub trait ProcessSpec {
    fn host(&self) -> HostSpec;
}

/// Supplies the hosts for a cluster location, one per member.
pub trait ClusterSpec {
    fn hosts(&self) -> Vec<HostSpec>;
}

/// Everything on this machine.
pub struct LocalhostProcess;

impl ProcessSpec for LocalhostProcess {
    fn host(&self) -> HostSpec {
        HostSpec::Localhost
    }
}

/// `size` members, all on this machine.
pub struct LocalhostCluster {
    pub size: u32,
}

impl ClusterSpec for LocalhostCluster {
    fn hosts(&self) -> Vec<HostSpec> {
        (0..self.size).map(|_| HostSpec::Localhost).collect()
    }
}

/// A process spec computed at bind time from a closure, for deployments
/// whose shape is decided by ordinary Rust.
pub struct DeployProcessSpec(Box<dyn Fn() -> HostSpec>);

impl DeployProcessSpec {
    pub fn new(f: impl Fn() -> HostSpec + 'static) -> Self {
        DeployProcessSpec(Box::new(f))
    }
}

impl ProcessSpec for DeployProcessSpec {
    fn host(&self) -> HostSpec {
        (self.0)()
    }
}

/// A cluster spec computed at bind time from a closure.
pub struct DeployClusterSpec(Box<dyn Fn() -> Vec<HostSpec>>);

impl DeployClusterSpec {
    pub fn new(f: impl Fn() -> Vec<HostSpec> + 'static) -> Self {
        DeployClusterSpec(Box::new(f))
    }
}

impl ClusterSpec for DeployClusterSpec {
    fn hosts(&self) -> Vec<HostSpec> {
        (self.0)()
    }
}

/// One machine in the deployment config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ResourceEntry {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub machine_type: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
    pub location: LocationId,
    pub member: u32,
    pub port: u16,
    pub control_port: u16,
}

/// One allow-rule: src instance may reach dst instance on `port` for
/// `channel`. Exactly one rule exists per (channel, sender, receiver) pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct NetworkRule {
    pub src: String,
    pub dst: String,
    pub port: u16,
    pub channel: u32,
}

/// The emitted deployment description: resources plus the network rules the
/// graph's channels require. Serialized deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DeploymentConfig {
    pub resource: BTreeMap<String, ResourceEntry>,
    pub network: Vec<NetworkRule>,
}

impl DeploymentConfig {
    pub fn to_json(&self) -> String {
        // BTreeMap keys and pre-sorted rules make this byte-stable.
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Name of the machine that runs `member` of `location`.
pub fn resource_name(location: LocationId, member: u32) -> String {
    format!("loc-{}{}-m{}", location.kind.as_str(), location.index, member)
}

/// Assign every instance an address and a port, and derive the network rules
/// from the graph's channels.
///
/// Ports are sequential from `base_port` in location creation order. For
/// localhost hosts the manifest address is `127.0.0.1`; for cloud machines
/// it is the resource name, to be rewritten with the real address once the
/// machine exists.
pub fn bind(graph: &FlowGraph, base_port: u16) -> Result<(DeploymentConfig, Manifest), DeployError> {
    let mut resource = BTreeMap::new();
    let mut entries = Vec::new();
    let mut cluster_sizes = BTreeMap::new();
    let mut port = base_port;

    for (loc, binding) in &graph.locations {
        let hosts: Vec<HostSpec> = match binding {
            SpecBinding::Process(host) => vec![host.clone()],
            SpecBinding::Cluster(hosts) => {
                if hosts.is_empty() {
                    return Err(DeployError::EmptyCluster(*loc));
                }
                cluster_sizes.insert(loc.index.to_string(), hosts.len() as u32);
                hosts.clone()
            }
        };
        if loc.kind == LocationKind::Process && hosts.len() != 1 {
            return Err(DeployError::InvalidHost(*loc, "process binds one host".into()));
        }
        for (member, host) in hosts.iter().enumerate() {
            let member = member as u32;
            let name = resource_name(*loc, member);
            let (entry, addr) = match host {
                HostSpec::Localhost => (
                    ResourceEntry {
                        kind: "localhost".into(),
                        machine_type: None,
                        image: None,
                        region: None,
                        zone: None,
                        location: *loc,
                        member,
                        port,
                        control_port: port + CONTROL_PORT_OFFSET,
                    },
                    "127.0.0.1".to_string(),
                ),
                HostSpec::CloudMachine { machine_type, image, region } => (
                    ResourceEntry {
                        kind: "cloud_machine".into(),
                        machine_type: Some(machine_type.clone()),
                        image: Some(image.clone()),
                        region: Some(region.clone()),
                        zone: Some(region.clone()),
                        location: *loc,
                        member,
                        port,
                        control_port: port + CONTROL_PORT_OFFSET,
                    },
                    name.clone(),
                ),
            };
            resource.insert(name, entry);
            entries.push(ManifestEntry {
                kind: loc.kind.as_str().to_string(),
                index: loc.index,
                member,
                addr,
                port,
            });
            port += 1;
        }
    }

    // One allow-rule per (channel, sender instance, receiver instance).
    let mut network = Vec::new();
    for route in graph.channels() {
        let src_members = instance_count(graph, route.src)?;
        let dst_members = instance_count(graph, route.dst)?;
        for s in 0..src_members {
            for d in 0..dst_members {
                let dst_entry = entries
                    .iter()
                    .find(|e| {
                        e.kind == route.dst.kind.as_str() && e.index == route.dst.index && e.member == d
                    })
                    .expect("every instance has a manifest entry");
                network.push(NetworkRule {
                    src: resource_name(route.src, s),
                    dst: resource_name(route.dst, d),
                    port: dst_entry.port,
                    channel: route.channel.0,
                });
            }
        }
    }
    network.sort_by(|a, b| (a.channel, &a.src, &a.dst).cmp(&(b.channel, &b.src, &b.dst)));

    let config = DeploymentConfig { resource, network };
    let manifest = Manifest { locations: entries, cluster_sizes };
    Ok((config, manifest))
}

fn instance_count(graph: &FlowGraph, loc: LocationId) -> Result<u32, DeployError> {
    match graph.binding(loc) {
        Some(SpecBinding::Process(_)) => Ok(1),
        Some(SpecBinding::Cluster(hosts)) => Ok(hosts.len() as u32),
        None => Err(DeployError::MissingBinding(loc)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::FlowBuilder;
    use crate::q;

    fn sample_graph() -> FlowGraph {
        let flow = FlowBuilder::new();
        let p = flow.process(&LocalhostProcess);
        let c = flow.cluster(&LocalhostCluster { size: 2 });
        let s = flow
            .source_iter(&p, q!([(cid(0), 1), (cid(1), 2)]))
            .unwrap()
            .send(&c)
            .unwrap();
        s.for_each(q!(|v| print(v))).unwrap();
        flow.finish().unwrap()
    }

    #[test]
    fn ports_are_sequential_in_creation_order() {
        let (config, manifest) = bind(&sample_graph(), DEFAULT_BASE_PORT).unwrap();
        let ports: Vec<u16> = manifest.locations.iter().map(|e| e.port).collect();
        assert_eq!(ports, vec![35000, 35001, 35002]);
        assert_eq!(manifest.cluster_sizes.get("0"), Some(&2));
        let entry = &config.resource["loc-process0-m0"];
        assert_eq!(entry.control_port, 45000);
    }

    #[test]
    fn network_rules_cover_each_channel_pairing() {
        let (config, _) = bind(&sample_graph(), DEFAULT_BASE_PORT).unwrap();
        // One sender, two receiving members: two rules for channel 0.
        assert_eq!(config.network.len(), 2);
        assert!(config
            .network
            .iter()
            .all(|r| r.channel == 0 && r.src == "loc-process0-m0"));
        let dsts: Vec<&str> = config.network.iter().map(|r| r.dst.as_str()).collect();
        assert_eq!(dsts, vec!["loc-cluster0-m0", "loc-cluster0-m1"]);
    }

    #[test]
    fn cloud_hosts_carry_machine_fields_and_placeholder_addr() {
        let flow = FlowBuilder::new();
        let spec = DeployProcessSpec::new(|| HostSpec::CloudMachine {
            machine_type: "e2-micro".into(),
            image: "debian-cloud/debian-11".into(),
            region: "us-west1-a".into(),
        });
        let p = flow.process(&spec);
        flow.source_iter(&p, q!(0 .. 1))
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let graph = flow.finish().unwrap();
        let (config, manifest) = bind(&graph, DEFAULT_BASE_PORT).unwrap();
        let entry = &config.resource["loc-process0-m0"];
        assert_eq!(entry.kind, "cloud_machine");
        assert_eq!(entry.machine_type.as_deref(), Some("e2-micro"));
        assert_eq!(entry.zone.as_deref(), Some("us-west1-a"));
        assert_eq!(manifest.locations[0].addr, "loc-process0-m0");
    }

    #[test]
    fn empty_clusters_fail_to_bind() {
        let flow = FlowBuilder::new();
        let c = flow.cluster(&LocalhostCluster { size: 0 });
        flow.self_id_source(&c)
            .unwrap()
            .for_each(q!(|v| print(v)))
            .unwrap();
        let graph = flow.finish().unwrap();
        assert!(matches!(
            bind(&graph, DEFAULT_BASE_PORT),
            Err(DeployError::EmptyCluster(_))
        ));
    }
}
