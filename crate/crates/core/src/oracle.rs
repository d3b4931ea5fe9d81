//! Brute-force reference answers computed directly from the packet trace.
//!
//! Nothing here goes through probes, mappers or reducers: every function is a
//! plain loop over trace events with its own window arithmetic, so that a
//! disagreement with the distributed result points at the runtime.

use std::collections::{BTreeMap, BTreeSet};

use crate::apps::{
    CongestionReport, DdosAlarm, DdosParams, HotSpot, LossyPath, TopFlow, TopNReport,
    TrafficMatrixCell, Victim,
};
use crate::model::{FlowKey, LinkId, NodeId, SimTime, WindowId, WindowPolicy};
use crate::netsim::{Port, Role, Topology, Trace, TraceKind};

fn bounds(policy: &WindowPolicy, w: WindowId) -> (u64, u64) {
    let start = w.0 * policy.slide().micros();
    (start, start + policy.length().micros())
}

fn inside(policy: &WindowPolicy, w: WindowId, t: SimTime) -> bool {
    let (start, end) = bounds(policy, w);
    start <= t.micros() && t.micros() < end
}

/// Sort by count descending, then key ascending, then cut to `top_k`.
fn rank_desc<K: Ord + Copy>(tally: &BTreeMap<K, u64>, top_k: Option<usize>) -> Vec<(K, u64)> {
    let mut v: Vec<(K, u64)> = tally.iter().map(|(k, c)| (*k, *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = top_k {
        v.truncate(k);
    }
    v
}

/// Distinct 5-tuples per pool server among packets entering edge routers
/// from outside, alarming when the count exceeds the threshold.
pub fn oracle_ddos(
    trace: &Trace,
    topo: &Topology,
    params: &DdosParams,
    windows: &[WindowId],
) -> BTreeMap<WindowId, Vec<DdosAlarm>> {
    let mut out = BTreeMap::new();
    for &w in windows {
        let mut flows: BTreeMap<u32, BTreeSet<FlowKey>> = BTreeMap::new();
        for e in &trace.events {
            if e.kind != TraceKind::Ingress(Port::Access)
                || topo.role(e.node) != Some(Role::Edge)
                || !inside(&params.window, w, e.time)
            {
                continue;
            }
            let dst = e.packet.flow.dst_addr;
            if params.server_pool.contains(&dst) {
                flows.entry(dst).or_default().insert(e.packet.flow);
            }
        }
        let alarms = flows
            .into_iter()
            .filter(|(_, set)| set.len() as u64 > params.threshold)
            .map(|(server, set)| DdosAlarm {
                server,
                flows: set.len() as u64,
            })
            .collect();
        out.insert(w, alarms);
    }
    out
}

/// Per (ingress edge, egress edge) totals over packets delivered in each
/// window; latency is delivery time minus injection time.
pub fn oracle_traffic_matrix(
    trace: &Trace,
    topo: &Topology,
    window: &WindowPolicy,
    with_latency: bool,
    windows: &[WindowId],
) -> BTreeMap<WindowId, Vec<TrafficMatrixCell>> {
    let mut out = BTreeMap::new();
    for &w in windows {
        let mut cells: BTreeMap<(NodeId, NodeId), TrafficMatrixCell> = BTreeMap::new();
        for e in &trace.events {
            if e.kind != TraceKind::Deliver || !inside(window, w, e.time) {
                continue;
            }
            let (src, dst) = (e.packet.ingress_node, e.node);
            if topo.role(src) != Some(Role::Edge) || topo.role(dst) != Some(Role::Edge) {
                continue;
            }
            let cell = cells.entry((src, dst)).or_insert(TrafficMatrixCell {
                src,
                dst,
                packets: 0,
                bytes: 0,
                min_latency: None,
                max_latency: None,
            });
            cell.packets += 1;
            cell.bytes += u64::from(e.packet.size_bytes);
            if with_latency {
                let lat = SimTime(e.time.micros() - e.packet.inject_time.micros());
                cell.min_latency = Some(match cell.min_latency {
                    Some(m) if m <= lat => m,
                    _ => lat,
                });
                cell.max_latency = Some(match cell.max_latency {
                    Some(m) if m >= lat => m,
                    _ => lat,
                });
            }
        }
        out.insert(w, cells.into_values().collect());
    }
    out
}

/// Drop tallies by flow, by (node, port) and by (ingress, egress) path.
pub fn oracle_congestion(
    trace: &Trace,
    window: &WindowPolicy,
    top_k: Option<usize>,
    windows: &[WindowId],
) -> BTreeMap<WindowId, CongestionReport> {
    let mut out = BTreeMap::new();
    for &w in windows {
        let mut by_flow: BTreeMap<FlowKey, u64> = BTreeMap::new();
        let mut by_port: BTreeMap<(NodeId, LinkId), u64> = BTreeMap::new();
        let mut by_path: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
        for e in &trace.events {
            let TraceKind::Drop(link) = e.kind else {
                continue;
            };
            if !inside(window, w, e.time) {
                continue;
            }
            *by_flow.entry(e.packet.flow).or_insert(0) += 1;
            *by_port.entry((e.node, link)).or_insert(0) += 1;
            *by_path
                .entry((e.packet.ingress_node, e.packet.egress_node))
                .or_insert(0) += 1;
        }
        let report = CongestionReport {
            top_victims: rank_desc(&by_flow, top_k)
                .into_iter()
                .map(|(flow, drops)| Victim { flow, drops })
                .collect(),
            hot_spots: rank_desc(&by_port, top_k)
                .into_iter()
                .map(|((node, port), drops)| HotSpot { node, port, drops })
                .collect(),
            lossy_paths: rank_desc(&by_path, top_k)
                .into_iter()
                .map(|((ingress, egress), drops)| LossyPath {
                    ingress,
                    egress,
                    drops,
                })
                .collect(),
        };
        out.insert(w, report);
    }
    out
}

/// Exact per-flow packet and byte counts at network ingress, ranked.
pub fn oracle_topn(
    trace: &Trace,
    n: usize,
    window: &WindowPolicy,
    windows: &[WindowId],
) -> BTreeMap<WindowId, TopNReport> {
    let mut out = BTreeMap::new();
    for &w in windows {
        let mut counts: BTreeMap<FlowKey, (u64, u64)> = BTreeMap::new();
        for e in &trace.events {
            if e.kind == TraceKind::Ingress(Port::Access) && inside(window, w, e.time) {
                let c = counts.entry(e.packet.flow).or_insert((0, 0));
                c.0 += 1;
                c.1 += u64::from(e.packet.size_bytes);
            }
        }
        let mut flows: Vec<TopFlow> = counts
            .into_iter()
            .map(|(flow, (packets, bytes))| TopFlow {
                flow,
                packets,
                bytes,
            })
            .collect();
        flows.sort_by(|a, b| b.packets.cmp(&a.packets).then(a.flow.cmp(&b.flow)));
        flows.truncate(n);
        out.insert(w, TopNReport { flows });
    }
    out
}

/// Exact per-flow packet counts entering `node` from outside during `w`.
pub fn oracle_ingress_counts(
    trace: &Trace,
    node: NodeId,
    window: &WindowPolicy,
    w: WindowId,
) -> BTreeMap<FlowKey, u64> {
    let mut counts = BTreeMap::new();
    for e in &trace.events {
        if e.node == node && e.kind == TraceKind::Ingress(Port::Access) && inside(window, w, e.time)
        {
            *counts.entry(e.packet.flow).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{PacketRecord, TraceEvent};

    fn event(t: u64, node: u32, kind: TraceKind, flow: FlowKey) -> TraceEvent {
        TraceEvent {
            time: SimTime(t),
            node: NodeId(node),
            kind,
            packet: PacketRecord {
                seq: 0,
                flow,
                size_bytes: 100,
                ingress_node: NodeId(1),
                egress_node: NodeId(2),
                inject_time: SimTime(0),
                ctrl_flags: 0,
            },
        }
    }

    fn jump(len: u64) -> WindowPolicy {
        WindowPolicy::jump(SimTime(len)).unwrap()
    }

    #[test]
    fn empty_trace_is_empty() {
        let t = Trace::default();
        let c = oracle_congestion(&t, &jump(10), None, &[WindowId(0)]);
        assert!(c[&WindowId(0)].is_empty());
        let top = oracle_topn(&t, 3, &jump(10), &[WindowId(0)]);
        assert!(top[&WindowId(0)].flows.is_empty());
    }

    #[test]
    fn topn_ties_break_by_flow_key() {
        let a = FlowKey::new(2, 9, 1, 1, 6);
        let b = FlowKey::new(1, 9, 1, 1, 6);
        let t = Trace {
            events: vec![
                event(1, 1, TraceKind::Ingress(Port::Access), a),
                event(2, 1, TraceKind::Ingress(Port::Access), b),
                event(3, 1, TraceKind::Ingress(Port::Link(LinkId(0))), a),
            ],
        };
        let r = oracle_topn(&t, 5, &jump(10), &[WindowId(0)]);
        let flows: Vec<FlowKey> = r[&WindowId(0)].flows.iter().map(|f| f.flow).collect();
        assert_eq!(flows, vec![b, a]);
    }

    #[test]
    fn congestion_tie_order_and_windows() {
        let f = FlowKey::new(1, 2, 3, 4, 6);
        let t = Trace {
            events: vec![
                event(1, 5, TraceKind::Drop(LinkId(3)), f),
                event(2, 4, TraceKind::Drop(LinkId(3)), f),
                event(12, 4, TraceKind::Drop(LinkId(3)), f),
            ],
        };
        let r = oracle_congestion(&t, &jump(10), None, &[WindowId(0), WindowId(1)]);
        let w0 = &r[&WindowId(0)];
        assert_eq!(w0.top_victims[0].drops, 2);
        assert_eq!(w0.hot_spots[0].node, NodeId(4));
        assert_eq!(w0.hot_spots[1].node, NodeId(5));
        assert_eq!(r[&WindowId(1)].hot_spots.len(), 1);
    }
}
