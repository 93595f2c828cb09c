//! Network topology: routers (some hosting ENs), devices on access links, and a
//! preferential-attachment generator.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::packet::{FaceId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Router,
    Device,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub role: NodeRole,
    /// Prefix of the co-located EN, if this router hosts one.
    pub en_prefix: Option<String>,
    /// Services offered by the co-located EN.
    pub services: Vec<String>,
    pub device_prefix: Option<String>,
}

impl NodeInfo {
    pub fn router(id: u32) -> Self {
        Self {
            id: NodeId(id),
            role: NodeRole::Router,
            en_prefix: None,
            services: Vec::new(),
            device_prefix: None,
        }
    }

    pub fn edge(id: u32, prefix: &str, services: &[&str]) -> Self {
        Self {
            en_prefix: Some(crate::names::normalize_prefix(prefix)),
            services: services.iter().map(|s| s.to_string()).collect(),
            ..Self::router(id)
        }
    }

    pub fn device(id: u32, prefix: &str) -> Self {
        Self {
            id: NodeId(id),
            role: NodeRole::Device,
            en_prefix: None,
            services: Vec::new(),
            device_prefix: Some(crate::names::normalize_prefix(prefix)),
        }
    }

    pub fn is_en(&self) -> bool {
        self.en_prefix.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    /// One-way propagation delay.
    pub delay_us: u64,
}

/// One end of a link as seen from a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adjacency {
    pub face: FaceId,
    pub peer: NodeId,
    pub peer_face: FaceId,
    pub delay_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: Vec<NodeInfo>,
    links: Vec<Link>,
    adjacency: Vec<Vec<Adjacency>>,
}

impl Topology {
    /// Node ids must be `0..n` in order. Faces are numbered from 1 per node in
    /// link order; face 0 is the application face.
    pub fn new(nodes: Vec<NodeInfo>, links: Vec<Link>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0 as usize != i {
                return Err(config_err(format!("node {i} has id {}; ids must be 0..n in order", n.id)));
            }
            if n.role == NodeRole::Device && (n.is_en() || n.device_prefix.is_none()) {
                return Err(config_err(format!("device {} needs a prefix and cannot host an EN", n.id)));
            }
        }
        let mut adjacency: Vec<Vec<Adjacency>> = vec![Vec::new(); nodes.len()];
        for l in &links {
            let (a, b) = (l.a.0 as usize, l.b.0 as usize);
            if a >= nodes.len() || b >= nodes.len() {
                return Err(config_err(format!("link {}-{} references an unknown node", l.a, l.b)));
            }
            if a == b {
                return Err(config_err(format!("link {}-{} is a self loop", l.a, l.b)));
            }
            let fa = FaceId(adjacency[a].len() as u32 + 1);
            let fb = FaceId(adjacency[b].len() as u32 + 1);
            adjacency[a].push(Adjacency { face: fa, peer: l.b, peer_face: fb, delay_us: l.delay_us });
            adjacency[b].push(Adjacency { face: fb, peer: l.a, peer_face: fa, delay_us: l.delay_us });
        }
        let topo = Self { nodes, links, adjacency };
        topo.validate()?;
        Ok(topo)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(config_err("topology has no nodes"));
        }
        for n in &self.nodes {
            if n.role == NodeRole::Device {
                let adj = &self.adjacency[n.id.0 as usize];
                if adj.len() != 1 {
                    return Err(config_err(format!(
                        "device {} must have exactly one access link, has {}",
                        n.id,
                        adj.len()
                    )));
                }
                if self.nodes[adj[0].peer.0 as usize].role != NodeRole::Router {
                    return Err(config_err(format!("device {} must attach to a router", n.id)));
                }
            }
        }
        let mut prefixes = BTreeSet::new();
        for p in self.nodes.iter().flat_map(|n| n.en_prefix.iter().chain(&n.device_prefix)) {
            if !prefixes.insert(p) {
                return Err(config_err(format!("prefix {p} is used by more than one node")));
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(n) = queue.pop_front() {
            for adj in &self.adjacency[n] {
                let p = adj.peer.0 as usize;
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(config_err(format!("node {} is disconnected", NodeId(i as u32))));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeInfo {
        &self.nodes[id.0 as usize]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn adjacency(&self, id: NodeId) -> &[Adjacency] {
        &self.adjacency[id.0 as usize]
    }

    pub fn via_face(&self, id: NodeId, face: FaceId) -> Option<&Adjacency> {
        self.adjacency(id).iter().find(|a| a.face == face)
    }

    pub fn ens(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.iter().filter(|n| n.is_en())
    }

    pub fn devices(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Device)
    }

    pub fn routers(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Router)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub seed: u64,
    pub nodes: usize,
    pub ens: usize,
    pub devices: usize,
    pub core_delay_us: u64,
    pub access_delay_us: u64,
    pub services: Vec<String>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            seed: 1,
            nodes: 20,
            ens: 10,
            devices: 10,
            core_delay_us: 5_000,
            access_delay_us: 2_000,
            services: vec!["classify".into()],
        }
    }
}

pub fn en_prefix_for(node: NodeId) -> String {
    format!("/edge/en{}", node.0)
}

pub fn device_prefix_for(index: usize) -> String {
    format!("/user/u{index}")
}

/// Barabási–Albert graph with m = 2 over the routers: two connected seed nodes,
/// then each new node links to two distinct existing nodes picked with
/// probability proportional to degree. `ens` routers are picked uniformly to
/// host ENs; each device hangs off a uniformly chosen router.
pub fn generate_topology(params: &TopologyParams) -> Result<Topology> {
    let n = params.nodes;
    if n < 2 {
        return Err(config_err("a generated topology needs at least 2 routers"));
    }
    if params.ens == 0 || params.ens > n {
        return Err(config_err(format!("ens must be in 1..={n}, got {}", params.ens)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut links = vec![Link { a: NodeId(0), b: NodeId(1), delay_us: params.core_delay_us }];
    // Each node appears once per incident edge.
    let mut endpoints: Vec<u32> = vec![0, 1];
    for new in 2..n as u32 {
        let mut targets = BTreeSet::new();
        while targets.len() < 2 {
            targets.insert(endpoints[rng.random_range(0..endpoints.len())]);
        }
        for t in targets {
            links.push(Link { a: NodeId(t), b: NodeId(new), delay_us: params.core_delay_us });
            endpoints.extend([t, new]);
        }
    }
    let services: Vec<&str> = params.services.iter().map(String::as_str).collect();
    let mut en_nodes: Vec<usize> = sample(&mut rng, n, params.ens).into_vec();
    en_nodes.sort_unstable();
    let mut nodes: Vec<NodeInfo> = (0..n as u32)
        .map(|i| {
            if en_nodes.binary_search(&(i as usize)).is_ok() {
                NodeInfo::edge(i, &en_prefix_for(NodeId(i)), &services)
            } else {
                NodeInfo::router(i)
            }
        })
        .collect();
    for d in 0..params.devices {
        let id = (n + d) as u32;
        let router = rng.random_range(0..n as u32);
        nodes.push(NodeInfo::device(id, &device_prefix_for(d)));
        links.push(Link { a: NodeId(router), b: NodeId(id), delay_us: params.access_delay_us });
    }
    Topology::new(nodes, links)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_topology_is_reproducible() {
        let p = TopologyParams::default();
        let a = generate_topology(&p).unwrap();
        let b = generate_topology(&p).unwrap();
        assert_eq!(a, b);
        let c = generate_topology(&TopologyParams { seed: 2, ..p }).unwrap();
        assert_ne!(a.links(), c.links());
    }

    #[test]
    fn ba_edge_count_and_roles() {
        for nodes in [20, 31, 40] {
            let p = TopologyParams { nodes, devices: 7, ..Default::default() };
            let t = generate_topology(&p).unwrap();
            let core = t.links().iter().filter(|l| l.delay_us == 5_000).count();
            assert_eq!(core, 2 * (nodes - 2) + 1);
            assert_eq!(t.ens().count(), 10);
            assert_eq!(t.devices().count(), 7);
            for d in t.devices() {
                let adj = t.adjacency(d.id);
                assert_eq!(adj.len(), 1);
                assert_eq!(adj[0].delay_us, 2_000);
            }
        }
    }

    #[test]
    fn faces_are_symmetric() {
        let t = generate_topology(&TopologyParams::default()).unwrap();
        for n in t.nodes() {
            for adj in t.adjacency(n.id) {
                let back = t.via_face(adj.peer, adj.peer_face).unwrap();
                assert_eq!((back.peer, back.face), (n.id, adj.peer_face));
            }
        }
    }

    #[test]
    fn rejects_bad_topologies() {
        let disconnected = Topology::new(
            vec![NodeInfo::router(0), NodeInfo::router(1)],
            vec![],
        );
        assert!(disconnected.is_err());
        let dual_homed = Topology::new(
            vec![NodeInfo::router(0), NodeInfo::router(1), NodeInfo::device(2, "/u")],
            vec![
                Link { a: NodeId(0), b: NodeId(1), delay_us: 1 },
                Link { a: NodeId(0), b: NodeId(2), delay_us: 1 },
                Link { a: NodeId(1), b: NodeId(2), delay_us: 1 },
            ],
        );
        assert!(dual_homed.is_err());
        assert!(generate_topology(&TopologyParams { ens: 21, ..Default::default() }).is_err());
    }
}
