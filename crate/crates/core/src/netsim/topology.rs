use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LinkId, NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Edge,
    Core,
    ServerFacing,
    /// Attached to the fabric but carrying no user traffic; hosts reducers.
    Observer,
}

/// A node-local port: the external host-facing side, or one end of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Access,
    Link(LinkId),
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Port::Access => f.write_str("access"),
            Port::Link(l) => write!(f, "{}", l.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub capacity_bps: u64,
    #[serde(rename = "delay_us")]
    pub propagation_delay: SimTime,
    pub buffer_bytes: u64,
}

impl LinkSpec {
    /// Time to clock `size_bytes` onto the wire, rounded up to whole microseconds.
    pub fn serialization_delay(&self, size_bytes: u32) -> SimTime {
        let bits_us = u128::from(size_bytes) * 8 * 1_000_000;
        SimTime(bits_us.div_ceil(u128::from(self.capacity_bps)) as u64)
    }

    pub fn peer(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Scenario-file form of a topology.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology has no nodes")]
    Empty,
    #[error("node {0} declared twice")]
    DuplicateNode(NodeId),
    #[error("link references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("more than one link between {0} and {1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("link {0}-{1} has zero capacity or buffer")]
    DegenerateLink(NodeId, NodeId),
    #[error("graph is disconnected: {0} unreachable from {1}")]
    DisconnectedGraph(NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    roles: BTreeMap<NodeId, Role>,
    links: Vec<LinkSpec>,
    /// Neighbours per node, sorted by neighbour id.
    adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId)>>,
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology, TopologyError> {
    Topology::build(config)
}

impl Topology {
    pub fn build(config: &TopologyConfig) -> Result<Self, TopologyError> {
        if config.nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut roles = BTreeMap::new();
        for n in &config.nodes {
            if roles.insert(n.id, n.role).is_some() {
                return Err(TopologyError::DuplicateNode(n.id));
            }
        }
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId)>> =
            roles.keys().map(|&id| (id, Vec::new())).collect();
        let mut pairs = BTreeSet::new();
        for (i, l) in config.links.iter().enumerate() {
            for end in [l.a, l.b] {
                if !roles.contains_key(&end) {
                    return Err(TopologyError::UnknownNode(end));
                }
            }
            if l.a == l.b {
                return Err(TopologyError::SelfLoop(l.a));
            }
            if !pairs.insert((l.a.min(l.b), l.a.max(l.b))) {
                return Err(TopologyError::DuplicateLink(l.a, l.b));
            }
            if l.capacity_bps == 0 || l.buffer_bytes == 0 {
                return Err(TopologyError::DegenerateLink(l.a, l.b));
            }
            let id = LinkId(i as u32);
            adjacency.get_mut(&l.a).unwrap().push((l.b, id));
            adjacency.get_mut(&l.b).unwrap().push((l.a, id));
        }
        for v in adjacency.values_mut() {
            v.sort();
        }

        let root = *roles.keys().next().unwrap();
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            for &(m, _) in &adjacency[&n] {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        if let Some(&missing) = roles.keys().find(|id| !seen.contains(id)) {
            return Err(TopologyError::DisconnectedGraph(missing, root));
        }

        Ok(Topology {
            roles,
            links: config.links.clone(),
            adjacency,
        })
    }

    pub fn to_config(&self) -> TopologyConfig {
        TopologyConfig {
            nodes: self
                .roles
                .iter()
                .map(|(&id, &role)| NodeSpec { id, role })
                .collect(),
            links: self.links.clone(),
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.roles.contains_key(&node)
    }

    pub fn role(&self, node: NodeId) -> Option<Role> {
        self.roles.get(&node).copied()
    }

    /// Node ids in ascending order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles.keys().copied()
    }

    pub fn nodes_with_role(&self, role: Role) -> Vec<NodeId> {
        self.roles
            .iter()
            .filter(|(_, &r)| r == role)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.get(id.0 as usize)
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, LinkId)] {
        self.adjacency.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.neighbors(a)
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, l)| l)
    }

    pub fn is_incident(&self, node: NodeId, link: LinkId) -> bool {
        self.link(link)
            .is_some_and(|l| l.a == node || l.b == node)
    }
}

/// Hop-count next-hop table. Equal-length alternatives resolve to the
/// smallest next-hop id.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    index: BTreeMap<NodeId, usize>,
    ids: Vec<NodeId>,
    next: Vec<Vec<Option<NodeId>>>,
}

pub fn compute_routes(topo: &Topology) -> RoutingTable {
    let ids: Vec<NodeId> = topo.nodes().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = ids.len();
    let mut next = vec![vec![None; n]; n];

    for (d, &dst) in ids.iter().enumerate() {
        let mut dist = vec![usize::MAX; n];
        dist[d] = 0;
        let mut queue = VecDeque::from([dst]);
        while let Some(u) = queue.pop_front() {
            let du = dist[index[&u]];
            for &(v, _) in topo.neighbors(u) {
                let vi = index[&v];
                if dist[vi] == usize::MAX {
                    dist[vi] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        for (s, &src) in ids.iter().enumerate() {
            if s == d || dist[s] == usize::MAX {
                continue;
            }
            // neighbours are sorted, so the first one closer to dst wins ties
            next[s][d] = topo
                .neighbors(src)
                .iter()
                .map(|&(v, _)| v)
                .find(|v| dist[index[v]] + 1 == dist[s]);
        }
    }
    RoutingTable { index, ids, next }
}

impl RoutingTable {
    pub fn next_hop(&self, src: NodeId, dst: NodeId) -> Option<NodeId> {
        let s = *self.index.get(&src)?;
        let d = *self.index.get(&dst)?;
        self.next[s][d]
    }

    /// Node sequence from `src` to `dst`, both inclusive.
    pub fn path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let mut path = vec![src];
        let mut cur = src;
        while cur != dst {
            cur = self.next_hop(cur, dst)?;
            path.push(cur);
            if path.len() > self.ids.len() {
                return None;
            }
        }
        Some(path)
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        self.path(src, dst).map(|p| p.len() - 1)
    }
}
