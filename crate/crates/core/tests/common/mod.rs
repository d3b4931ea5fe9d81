#![allow(dead_code)]

use netmr::netsim::{
    FlowSpec, LinkSpec, NodeSpec, Role, SplitMix64, Topology, TopologyConfig, TrafficSpec,
};
use netmr::{FlowKey, NodeId, SimTime, WindowId, WindowPolicy};

pub fn node(id: u32, role: Role) -> NodeSpec {
    NodeSpec {
        id: NodeId(id),
        role,
    }
}

pub fn link(a: u32, b: u32, capacity_bps: u64, delay_us: u64, buffer_bytes: u64) -> LinkSpec {
    LinkSpec {
        a: NodeId(a),
        b: NodeId(b),
        capacity_bps,
        propagation_delay: SimTime(delay_us),
        buffer_bytes,
    }
}

pub fn flow(
    key: FlowKey,
    ingress: u32,
    egress: u32,
    count: u32,
    size: u32,
    start_us: u64,
    gap_us: u64,
) -> FlowSpec {
    FlowSpec {
        flow: key,
        ingress: NodeId(ingress),
        egress: NodeId(egress),
        packet_count: count,
        packet_size_bytes: size,
        start: SimTime(start_us),
        inter_packet_gap: SimTime(gap_us),
        ctrl_flags: 0,
    }
}

/// Three left edges (3, 4, 5) on core 1, three right edges (6, 7, 8) on
/// core 2, cores joined by one link, observer 9 on core 1.
pub fn dumbbell(capacity_bps: u64, buffer_bytes: u64) -> Topology {
    let mut nodes = vec![node(1, Role::Core), node(2, Role::Core)];
    nodes.extend((3..=8).map(|i| node(i, Role::Edge)));
    nodes.push(node(9, Role::Observer));
    let mut links = vec![link(1, 2, capacity_bps, 200, buffer_bytes)];
    for e in 3..=5 {
        links.push(link(e, 1, capacity_bps, 50 + u64::from(e) * 10, buffer_bytes));
    }
    for e in 6..=8 {
        links.push(link(2, e, capacity_bps, 50 + u64::from(e) * 10, buffer_bytes));
    }
    links.push(link(1, 9, capacity_bps, 100, buffer_bytes));
    Topology::build(&TopologyConfig { nodes, links }).unwrap()
}

/// Left-to-right traffic whose packets are all injected in the first 80% of
/// each window, leaving a quiet tail before every boundary.
pub fn quiet_tail_traffic(seed: u64, n_flows: usize, window_us: u64, windows: u64) -> TrafficSpec {
    let mut rng = SplitMix64::new(seed);
    let keys: Vec<FlowKey> = (0..n_flows)
        .map(|i| FlowKey::new(rng.next_u64() as u32, 0x0a00_0001 + i as u32, 1024, 80, 6))
        .collect();
    let ingress: Vec<u32> = (0..n_flows).map(|_| 3 + rng.below(3) as u32).collect();
    let egress: Vec<u32> = (0..n_flows).map(|_| 6 + rng.below(3) as u32).collect();
    let mut flows = Vec::new();
    for w in 0..windows {
        for (i, &k) in keys.iter().enumerate() {
            // a few heavy flows, many light ones
            let count = if rng.chance(150) {
                rng.between(150, 300)
            } else {
                rng.between(5, 60)
            } as u32;
            let start = w * window_us + rng.below(window_us * 3 / 10);
            let room = window_us / 2;
            let gap = (room / u64::from(count)).max(1);
            flows.push(flow(
                k,
                ingress[i],
                egress[i],
                count,
                rng.between(64, 1500) as u32,
                start,
                gap,
            ));
        }
    }
    TrafficSpec { flows, seed }
}

pub fn windows_until(policy: &WindowPolicy, first: WindowId, until: SimTime) -> Vec<WindowId> {
    (first.0..)
        .map(WindowId)
        .take_while(|&w| policy.end(w) <= until)
        .collect()
}
