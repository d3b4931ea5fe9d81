mod common;

use std::collections::{BTreeMap, VecDeque};

use common::{flow, link, node};
use netmr::netsim::{
    compute_routes, generate_topology, generate_traffic, run, Role, Topology, TopologyConfig,
    TopologyGenerator, TraceKind, TrafficGenerator, TrafficSpec,
};
use netmr::{FlowKey, NodeId, SimTime};
use proptest::prelude::*;

fn bfs(topo: &Topology, from: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        for &(m, _) in topo.neighbors(n) {
            dist.entry(m).or_insert_with(|| {
                queue.push_back(m);
                d + 1
            });
        }
    }
    dist
}

fn line3(capacity_bps: u64, buffer: u64) -> Topology {
    Topology::build(&TopologyConfig {
        nodes: vec![node(1, Role::Edge), node(2, Role::Core), node(3, Role::Edge)],
        links: vec![link(1, 2, capacity_bps, 100, buffer), link(2, 3, capacity_bps, 200, buffer)],
    })
    .unwrap()
}

fn random_net(seed: u64) -> (Topology, TrafficSpec) {
    let topo = Topology::build(&generate_topology(
        &TopologyGenerator {
            n_core: 4,
            n_edge: 5,
            n_observer: 1,
            extra_core_links: 2,
            ..Default::default()
        },
        seed,
    ))
    .unwrap();
    let traffic = generate_traffic(
        &TrafficGenerator {
            n_flows: 60,
            span_us: 200_000,
            ..Default::default()
        },
        &topo,
        seed,
    )
    .unwrap();
    (topo, traffic)
}

#[test]
fn routes_are_shortest_with_low_id_ties() {
    for seed in 0..5 {
        let (topo, _) = random_net(seed);
        let routes = compute_routes(&topo);
        for src in topo.nodes() {
            let from_src = bfs(&topo, src);
            for dst in topo.nodes() {
                assert_eq!(routes.hops(src, dst), Some(from_src[&dst]));
                if src == dst {
                    continue;
                }
                let to_dst = bfs(&topo, dst);
                let want = topo
                    .neighbors(src)
                    .iter()
                    .map(|&(m, _)| m)
                    .filter(|m| to_dst[m] + 1 == to_dst[&src])
                    .min();
                assert_eq!(routes.next_hop(src, dst), want, "{src} -> {dst}");
                let path = routes.path(src, dst).unwrap();
                assert_eq!(path.len(), from_src[&dst] + 1);
                assert!(path.windows(2).all(|p| topo.link_between(p[0], p[1]).is_some()));
            }
        }
    }
}

#[test]
fn single_packet_latency_matches_link_arithmetic() {
    // 1000 bytes at 8 Mbit/s is 1000 us of serialization per hop
    let topo = line3(8_000_000, 10_000);
    let key = FlowKey::new(1, 2, 3, 4, 17);
    let traffic = TrafficSpec {
        flows: vec![flow(key, 1, 3, 1, 1000, 500, 0)],
        seed: 0,
    };
    let out = run(&topo, &compute_routes(&topo), &traffic, &[], SimTime(1_000_000)).unwrap();
    assert_eq!(out.delivered.len(), 1);
    assert_eq!(out.delivered[0].time, SimTime(500 + 1000 + 100 + 1000 + 200));
    assert_eq!(out.delivered[0].node, NodeId(3));
}

#[test]
fn overload_drops_at_the_tail() {
    // 100 packets injected back to back into a 3-packet buffer
    let topo = line3(1_000_000, 3_000);
    let key = FlowKey::new(1, 2, 3, 4, 17);
    let traffic = TrafficSpec {
        flows: vec![flow(key, 1, 3, 100, 1000, 0, 1)],
        seed: 0,
    };
    let out = run(&topo, &compute_routes(&topo), &traffic, &[], SimTime(10_000_000)).unwrap();
    assert!(!out.drops.is_empty());
    assert_eq!(out.delivered.len() + out.drops.len(), 100);
    assert!(out.drops.iter().all(|d| d.node == NodeId(1)));
    // drop-tail: the first packets always get through
    let first: Vec<u64> = out.delivered.iter().take(3).map(|d| d.packet.seq).collect();
    assert_eq!(first, vec![0, 1, 2]);
}

#[test]
fn ample_capacity_never_drops() {
    let (topo, traffic) = random_net(11);
    let cfg = topo.to_config();
    let roomy = Topology::build(&TopologyConfig {
        links: cfg
            .links
            .iter()
            .map(|l| link(l.a.0, l.b.0, 10_000_000_000, 50, 100_000_000))
            .collect(),
        ..cfg
    })
    .unwrap();
    let out = run(&roomy, &compute_routes(&roomy), &traffic, &[], SimTime(2_000_000)).unwrap();
    assert!(out.drops.is_empty());
    assert_eq!(out.delivered.len() as u64, traffic.total_packets());
}

#[test]
fn per_flow_order_is_preserved() {
    let (topo, traffic) = random_net(3);
    let out = run(&topo, &compute_routes(&topo), &traffic, &[], SimTime(1_000_000)).unwrap();
    let mut last: BTreeMap<FlowKey, u64> = BTreeMap::new();
    for d in &out.delivered {
        if let Some(prev) = last.insert(d.packet.flow, d.packet.seq) {
            assert!(prev < d.packet.seq, "{} reordered", d.packet.flow);
        }
    }
}

#[test]
fn trace_agrees_with_outputs() {
    let (topo, traffic) = random_net(5);
    let out = run(&topo, &compute_routes(&topo), &traffic, &[], SimTime(400_000)).unwrap();
    let count = |pred: fn(&TraceKind) -> bool| out.trace.events.iter().filter(|e| pred(&e.kind)).count();
    assert_eq!(count(|k| matches!(k, TraceKind::Deliver)), out.delivered.len());
    assert_eq!(count(|k| matches!(k, TraceKind::Drop(_))), out.drops.len());
    assert_eq!(out.trace.drops().count(), out.drops.len());
    assert!(out.trace.events.windows(2).all(|w| w[0].time <= w[1].time));
    let text = out.trace.to_text();
    assert_eq!(netmr::netsim::Trace::parse(&text).unwrap().to_text(), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn packets_are_conserved(seed in 0u64..10_000, until in 1u64..400_000) {
        let (topo, traffic) = random_net(seed);
        let out = run(&topo, &compute_routes(&topo), &traffic, &[], SimTime(until)).unwrap();
        prop_assert_eq!(
            out.injected,
            out.delivered.len() as u64 + out.drops.len() as u64 + out.in_flight
        );
        prop_assert!(out.delivered.iter().all(|d| d.time <= SimTime(until)));
    }

    #[test]
    fn runs_are_reproducible(seed in 0u64..10_000) {
        let (topo, traffic) = random_net(seed);
        let routes = compute_routes(&topo);
        let a = run(&topo, &routes, &traffic, &[], SimTime(300_000)).unwrap();
        let b = run(&topo, &routes, &traffic, &[], SimTime(300_000)).unwrap();
        prop_assert_eq!(a.trace.to_text(), b.trace.to_text());
    }
}
