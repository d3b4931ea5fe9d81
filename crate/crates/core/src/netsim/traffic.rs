use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topology::{LinkSpec, NodeSpec, Role, Topology, TopologyConfig};
use crate::model::{FlowKey, NodeId, Packet, SimTime, MAX_PACKET_BYTES, MIN_PACKET_BYTES};

/// SplitMix64 with the reference constants.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform-ish draw in `[0, n)` by plain modulo.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }

    /// Draw in the inclusive range `[lo, hi]`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// True with probability `permille / 1000`.
    pub fn chance(&mut self, permille: u32) -> bool {
        self.below(1000) < u64::from(permille)
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow: FlowKey,
    pub ingress: NodeId,
    pub egress: NodeId,
    pub packet_count: u32,
    pub packet_size_bytes: u32,
    #[serde(rename = "start_us")]
    pub start: SimTime,
    #[serde(rename = "gap_us")]
    pub inter_packet_gap: SimTime,
    #[serde(default)]
    pub ctrl_flags: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrafficError {
    #[error("flow {index}: unknown node {node}")]
    UnknownNode { index: usize, node: NodeId },
    #[error("flow {index}: ingress equals egress")]
    SameEndpoints { index: usize },
    #[error("flow {index}: packet_count must be at least 1")]
    NoPackets { index: usize },
    #[error("flow {index}: packet size {size} outside [64, 9216]")]
    BadSize { index: usize, size: u32 },
    #[error("flow {index}: {flow} already enters at a different ingress/egress pair")]
    InconsistentFlow { index: usize, flow: FlowKey },
    #[error("flow {index}: endpoint {node} is an observer node")]
    ObserverEndpoint { index: usize, node: NodeId },
    #[error("generator: {0}")]
    Generator(String),
}

impl TrafficSpec {
    pub fn validate(&self, topo: &Topology) -> Result<(), TrafficError> {
        let mut endpoints: BTreeMap<FlowKey, (NodeId, NodeId)> = BTreeMap::new();
        for (index, f) in self.flows.iter().enumerate() {
            for node in [f.ingress, f.egress] {
                match topo.role(node) {
                    None => return Err(TrafficError::UnknownNode { index, node }),
                    Some(Role::Observer) => {
                        return Err(TrafficError::ObserverEndpoint { index, node })
                    }
                    Some(_) => {}
                }
            }
            if f.ingress == f.egress {
                return Err(TrafficError::SameEndpoints { index });
            }
            if f.packet_count == 0 {
                return Err(TrafficError::NoPackets { index });
            }
            if !(MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(&f.packet_size_bytes) {
                return Err(TrafficError::BadSize {
                    index,
                    size: f.packet_size_bytes,
                });
            }
            let ends = *endpoints.entry(f.flow).or_insert((f.ingress, f.egress));
            if ends != (f.ingress, f.egress) {
                return Err(TrafficError::InconsistentFlow {
                    index,
                    flow: f.flow,
                });
            }
        }
        Ok(())
    }

    pub fn total_packets(&self) -> u64 {
        self.flows.iter().map(|f| u64::from(f.packet_count)).sum()
    }

    /// Expands every flow into packets ordered by (inject time, ingress
    /// node, flow index, packet index) and numbers them in that order.
    pub fn packets(&self) -> Vec<Packet> {
        let mut order: Vec<(SimTime, NodeId, usize, u32)> =
            Vec::with_capacity(self.total_packets() as usize);
        for (fi, f) in self.flows.iter().enumerate() {
            for i in 0..f.packet_count {
                let t = f.start + SimTime(f.inter_packet_gap.0 * u64::from(i));
                order.push((t, f.ingress, fi, i));
            }
        }
        order.sort_unstable();
        order
            .into_iter()
            .enumerate()
            .map(|(seq, (t, ingress, fi, _))| {
                let f = &self.flows[fi];
                Packet {
                    seq: seq as u64,
                    flow: f.flow,
                    size_bytes: f.packet_size_bytes,
                    inject_time: t,
                    ingress_node: ingress,
                    egress_node: f.egress,
                    metadata: Vec::new(),
                    ctrl_flags: f.ctrl_flags,
                }
            })
            .collect()
    }
}

fn default_proto_choices() -> Vec<u8> {
    vec![6, 17]
}

/// Parameters for randomized traffic. Endpoints default to the edge nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficGenerator {
    pub n_flows: usize,
    pub min_packets: u32,
    pub max_packets: u32,
    pub min_size: u32,
    pub max_size: u32,
    /// Flow start times are drawn from `[0, span_us)`.
    pub span_us: u64,
    pub min_gap_us: u64,
    pub max_gap_us: u64,
    /// Destination addresses that attract a share of the flows.
    #[serde(default)]
    pub server_pool: Vec<u32>,
    #[serde(default)]
    pub server_permille: u32,
    #[serde(default)]
    pub syn_permille: u32,
    #[serde(default = "default_proto_choices")]
    pub protocols: Vec<u8>,
    #[serde(default)]
    pub endpoints: Option<Vec<NodeId>>,
}

impl Default for TrafficGenerator {
    fn default() -> Self {
        TrafficGenerator {
            n_flows: 100,
            min_packets: 10,
            max_packets: 100,
            min_size: 64,
            max_size: 1500,
            span_us: 1_000_000,
            min_gap_us: 100,
            max_gap_us: 10_000,
            server_pool: Vec::new(),
            server_permille: 0,
            syn_permille: 0,
            protocols: default_proto_choices(),
            endpoints: None,
        }
    }
}

pub fn generate_traffic(
    gen: &TrafficGenerator,
    topo: &Topology,
    seed: u64,
) -> Result<TrafficSpec, TrafficError> {
    let endpoints = match &gen.endpoints {
        Some(e) => e.clone(),
        None => topo.nodes_with_role(Role::Edge),
    };
    if endpoints.len() < 2 {
        return Err(TrafficError::Generator(
            "need at least two endpoint nodes".into(),
        ));
    }
    if gen.min_packets == 0
        || gen.min_packets > gen.max_packets
        || gen.min_size > gen.max_size
        || gen.min_gap_us > gen.max_gap_us
        || gen.span_us == 0
        || gen.protocols.is_empty()
    {
        return Err(TrafficError::Generator("inconsistent ranges".into()));
    }
    if gen.server_permille > 0 && gen.server_pool.is_empty() {
        return Err(TrafficError::Generator(
            "server_permille set without a server pool".into(),
        ));
    }

    let mut rng = SplitMix64::new(seed);
    let mut seen = BTreeSet::new();
    let mut flows = Vec::with_capacity(gen.n_flows);
    while flows.len() < gen.n_flows {
        let ingress = *rng.pick(&endpoints);
        let egress = loop {
            let e = *rng.pick(&endpoints);
            if e != ingress {
                break e;
            }
        };
        let dst_addr = if gen.server_permille > 0 && rng.chance(gen.server_permille) {
            *rng.pick(&gen.server_pool)
        } else {
            rng.next_u64() as u32
        };
        let flow = FlowKey {
            src_addr: rng.next_u64() as u32,
            dst_addr,
            src_port: rng.next_u64() as u16,
            dst_port: rng.next_u64() as u16,
            proto: *rng.pick(&gen.protocols),
        };
        let packet_count = rng.between(gen.min_packets.into(), gen.max_packets.into()) as u32;
        let packet_size_bytes = rng.between(gen.min_size.into(), gen.max_size.into()) as u32;
        let start = SimTime(rng.below(gen.span_us));
        let gap = SimTime(rng.between(gen.min_gap_us, gen.max_gap_us));
        let ctrl_flags = if rng.chance(gen.syn_permille) { 0x02 } else { 0 };
        if !seen.insert(flow) {
            continue;
        }
        flows.push(FlowSpec {
            flow,
            ingress,
            egress,
            packet_count,
            packet_size_bytes,
            start,
            inter_packet_gap: gap,
            ctrl_flags,
        });
    }
    let spec = TrafficSpec { flows, seed };
    spec.validate(topo)?;
    Ok(spec)
}

/// Parameters for a random connected topology: a core spanning tree with
/// extra chords, edge nodes hanging off cores and observer leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGenerator {
    pub n_core: u32,
    pub n_edge: u32,
    pub n_observer: u32,
    pub extra_core_links: u32,
    pub core_capacity_bps: u64,
    pub edge_capacity_bps: u64,
    pub min_delay_us: u64,
    pub max_delay_us: u64,
    pub buffer_bytes: u64,
}

impl Default for TopologyGenerator {
    fn default() -> Self {
        TopologyGenerator {
            n_core: 3,
            n_edge: 5,
            n_observer: 1,
            extra_core_links: 1,
            core_capacity_bps: 10_000_000,
            edge_capacity_bps: 20_000_000,
            min_delay_us: 50,
            max_delay_us: 500,
            buffer_bytes: 30_000,
        }
    }
}

pub fn generate_topology(gen: &TopologyGenerator, seed: u64) -> TopologyConfig {
    let mut rng = SplitMix64::new(seed ^ 0x746f_706f);
    let mut nodes = Vec::new();
    let mut links: Vec<LinkSpec> = Vec::new();
    let mut pairs = BTreeSet::new();
    let mut next_id = 1u32;
    let mut mk = |role: Role, nodes: &mut Vec<NodeSpec>| {
        let id = NodeId(next_id);
        next_id += 1;
        nodes.push(NodeSpec { id, role });
        id
    };
    let cores: Vec<NodeId> = (0..gen.n_core.max(1))
        .map(|_| mk(Role::Core, &mut nodes))
        .collect();
    let edges: Vec<NodeId> = (0..gen.n_edge).map(|_| mk(Role::Edge, &mut nodes)).collect();
    let observers: Vec<NodeId> = (0..gen.n_observer)
        .map(|_| mk(Role::Observer, &mut nodes))
        .collect();

    let mut add = |a: NodeId, b: NodeId, cap: u64, rng: &mut SplitMix64| {
        if a == b || !pairs.insert((a.min(b), a.max(b))) {
            return;
        }
        links.push(LinkSpec {
            a,
            b,
            capacity_bps: cap,
            propagation_delay: SimTime(rng.between(gen.min_delay_us, gen.max_delay_us)),
            buffer_bytes: gen.buffer_bytes,
        });
    };
    for i in 1..cores.len() {
        let parent = cores[rng.below(i as u64) as usize];
        add(parent, cores[i], gen.core_capacity_bps, &mut rng);
    }
    for _ in 0..gen.extra_core_links {
        let a = *rng.pick(&cores);
        let b = *rng.pick(&cores);
        add(a, b, gen.core_capacity_bps, &mut rng);
    }
    for &e in &edges {
        let c = *rng.pick(&cores);
        add(c, e, gen.edge_capacity_bps, &mut rng);
    }
    for &o in &observers {
        let c = *rng.pick(&cores);
        add(c, o, gen.core_capacity_bps, &mut rng);
    }
    TopologyConfig { nodes, links }
}
