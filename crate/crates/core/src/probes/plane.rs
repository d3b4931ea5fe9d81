use std::collections::{BTreeMap, HashMap};

use super::{
    fsm_step, AttachPoint, CounterCell, CounterEntry, CounterSnapshot, EmissionPayload, GroupKey,
    Location, ProbeEmission, ProbeError, ProbeId, ProbeKind, ProbeSpec, StateId,
};
use crate::model::{FlowKey, LinkId, NodeId, Packet, SimTime};
use crate::netsim::{Port, Topology};

/// What happened to the packet at the attach point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Transit,
    /// Tail-dropped at the output queue towards `link`.
    Drop { link: LinkId },
}

#[derive(Debug)]
enum ProbeState {
    Counter(BTreeMap<GroupKey, CounterCell>),
    Meter {
        window: u64,
        bytes: u64,
        fired: bool,
    },
    Stateless,
    Sampler(u64),
    Fsm(HashMap<FlowKey, StateId>),
}

#[derive(Debug)]
struct Installed {
    attach: AttachPoint,
    spec: ProbeSpec,
    state: ProbeState,
    installed_at: SimTime,
}

/// Every probe installed across the simulated data plane.
#[derive(Debug, Default)]
pub struct ProbePlane {
    next_id: u64,
    probes: BTreeMap<ProbeId, Installed>,
    /// Probe ids per attach point, in installation order.
    by_attach: HashMap<(NodeId, Location), Vec<ProbeId>>,
}

impl ProbePlane {
    pub fn new() -> Self {
        ProbePlane::default()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn attach_point(&self, id: ProbeId) -> Option<AttachPoint> {
        self.probes.get(&id).map(|p| p.attach)
    }

    pub fn install_probe(
        &mut self,
        topo: &Topology,
        attach: AttachPoint,
        spec: ProbeSpec,
        at: SimTime,
    ) -> Result<ProbeId, ProbeError> {
        validate_attach(topo, attach)?;
        let state = match &spec.kind {
            ProbeKind::Counter { .. } => ProbeState::Counter(BTreeMap::new()),
            ProbeKind::Meter {
                threshold_bps,
                window_us,
            } => {
                if *window_us == 0 || *threshold_bps == 0 {
                    return Err(ProbeError::InvalidSpec(
                        "meter needs a positive window and threshold".into(),
                    ));
                }
                ProbeState::Meter {
                    window: at.0 / window_us,
                    bytes: 0,
                    fired: false,
                }
            }
            ProbeKind::Sampler { n } => {
                if *n == 0 {
                    return Err(ProbeError::InvalidSpec("sampler needs n >= 1".into()));
                }
                ProbeState::Sampler(0)
            }
            ProbeKind::Fsm { table } => {
                if table.transitions.is_empty() {
                    return Err(ProbeError::InvalidSpec("fsm has no transitions".into()));
                }
                ProbeState::Fsm(HashMap::new())
            }
            ProbeKind::Filter
            | ProbeKind::Label { .. }
            | ProbeKind::Timestamp { .. }
            | ProbeKind::DropNotify => ProbeState::Stateless,
        };
        let id = ProbeId(self.next_id);
        self.next_id += 1;
        self.probes.insert(
            id,
            Installed {
                attach,
                spec,
                state,
                installed_at: at,
            },
        );
        self.by_attach
            .entry((attach.node, attach.location))
            .or_default()
            .push(id);
        Ok(id)
    }

    pub fn remove_probe(
        &mut self,
        node: NodeId,
        id: ProbeId,
        _at: SimTime,
    ) -> Result<(), ProbeError> {
        match self.probes.get(&id) {
            Some(p) if p.attach.node == node => {}
            _ => return Err(ProbeError::UnknownProbe(id, node)),
        }
        let p = self.probes.remove(&id).unwrap();
        let key = (p.attach.node, p.attach.location);
        if let Some(ids) = self.by_attach.get_mut(&key) {
            ids.retain(|&i| i != id);
            if ids.is_empty() {
                self.by_attach.remove(&key);
            }
        }
        Ok(())
    }

    pub fn read_and_reset(&mut self, id: ProbeId, at: SimTime) -> Result<CounterSnapshot, ProbeError> {
        let p = self
            .probes
            .get_mut(&id)
            .ok_or(ProbeError::NotInstalled(id))?;
        match &mut p.state {
            ProbeState::Counter(cells) => Ok(CounterSnapshot {
                probe: id,
                at,
                cells: std::mem::take(cells)
                    .into_iter()
                    .map(|(group, cell)| CounterEntry { group, cell })
                    .collect(),
            }),
            _ => Err(ProbeError::WrongProbeKind(id, p.spec.kind_name())),
        }
    }

    /// Runs every probe at `(node, location)` over `packet`, in installation
    /// order, appending emissions to `out`.
    pub fn process_at_attach(
        &mut self,
        node: NodeId,
        location: Location,
        observation: Observation,
        packet: &mut Packet,
        now: SimTime,
        out: &mut Vec<ProbeEmission>,
    ) {
        if self.probes.is_empty() {
            return;
        }
        let Some(ids) = self.by_attach.get(&(node, location)) else {
            return;
        };
        for &id in ids {
            let p = self.probes.get_mut(&id).expect("indexed probe exists");
            debug_assert!(p.installed_at <= now);
            if !p.spec.predicate.eval(packet) {
                continue;
            }
            let mut emit = |payload| {
                out.push(ProbeEmission {
                    probe: id,
                    node,
                    time: now,
                    payload,
                })
            };
            if let Observation::Drop { link } = observation {
                if let ProbeKind::DropNotify = p.spec.kind {
                    emit(EmissionPayload::DropNotice {
                        packet: packet.clone(),
                        port: link,
                    });
                }
                continue;
            }
            match (&p.spec.kind, &mut p.state) {
                (
                    ProbeKind::Counter {
                        group_by,
                        latency_from,
                    },
                    ProbeState::Counter(cells),
                ) => {
                    let cell = cells.entry(group_by.key(packet)).or_default();
                    cell.packets += 1;
                    cell.bytes += u64::from(packet.size_bytes);
                    if let Some(since) = latency_from.as_deref().and_then(|t| packet.meta(t)) {
                        let lat = SimTime(now.0.saturating_sub(since));
                        cell.min_latency = Some(cell.min_latency.map_or(lat, |m| m.min(lat)));
                        cell.max_latency = Some(cell.max_latency.map_or(lat, |m| m.max(lat)));
                    }
                }
                (
                    ProbeKind::Meter {
                        threshold_bps,
                        window_us,
                    },
                    ProbeState::Meter {
                        window,
                        bytes,
                        fired,
                    },
                ) => {
                    let w = now.0 / window_us;
                    if w != *window {
                        *window = w;
                        *bytes = 0;
                        *fired = false;
                    }
                    *bytes += u64::from(packet.size_bytes);
                    // bytes * 8 / window > threshold, in integer form
                    let bits_us = u128::from(*bytes) * 8 * 1_000_000;
                    if !*fired && bits_us > u128::from(*threshold_bps) * u128::from(*window_us) {
                        *fired = true;
                        emit(EmissionPayload::MeterExceeded {
                            window: w,
                            rate_bps: (bits_us / u128::from(*window_us)) as u64,
                        });
                    }
                }
                (ProbeKind::Filter, _) => emit(EmissionPayload::FilterMatch { flow: packet.flow }),
                (ProbeKind::Sampler { n }, ProbeState::Sampler(count)) => {
                    *count += 1;
                    if *count % n == 0 {
                        emit(EmissionPayload::Sample {
                            packet: packet.clone(),
                        });
                    }
                }
                (ProbeKind::Fsm { table }, ProbeState::Fsm(states)) => {
                    let state = states.entry(packet.flow).or_insert(table.initial);
                    let (next, event) = fsm_step(table, *state, packet);
                    *state = next;
                    if let Some(state) = event {
                        emit(EmissionPayload::FsmEvent {
                            flow: packet.flow,
                            state,
                        });
                    }
                }
                (ProbeKind::Label { tag }, _) => packet.push_meta(tag, u64::from(node.0)),
                (ProbeKind::Timestamp { tag }, _) => packet.push_meta(tag, now.0),
                (ProbeKind::DropNotify, _) => {}
                _ => unreachable!("probe state matches its kind"),
            }
        }
    }
}

fn validate_attach(topo: &Topology, attach: AttachPoint) -> Result<(), ProbeError> {
    let bad = || ProbeError::InvalidAttachPoint(attach);
    if !topo.contains(attach.node) {
        return Err(bad());
    }
    let link = match attach.location {
        Location::IngressPort(Port::Link(l))
        | Location::EgressPort(Port::Link(l))
        | Location::Queue(l) => Some(l),
        Location::IngressPort(Port::Access) | Location::EgressPort(Port::Access) => None,
        Location::FlowTable => None,
    };
    match link {
        Some(l) if !topo.is_incident(attach.node, l) => Err(bad()),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{build_topology, LinkSpec, NodeSpec, Role, TopologyConfig};
    use crate::probes::{FsmTable, GroupBy, Predicate};

    fn topo() -> Topology {
        build_topology(&TopologyConfig {
            nodes: (1..=3)
                .map(|i| NodeSpec {
                    id: NodeId(i),
                    role: Role::Edge,
                })
                .collect(),
            links: vec![
                LinkSpec {
                    a: NodeId(1),
                    b: NodeId(2),
                    capacity_bps: 1_000_000,
                    propagation_delay: SimTime(10),
                    buffer_bytes: 10_000,
                },
                LinkSpec {
                    a: NodeId(2),
                    b: NodeId(3),
                    capacity_bps: 1_000_000,
                    propagation_delay: SimTime(10),
                    buffer_bytes: 10_000,
                },
            ],
        })
        .unwrap()
    }

    fn pkt(seq: u64, src: u32) -> Packet {
        Packet {
            seq,
            flow: FlowKey::new(src, 99, 1, 2, 6),
            size_bytes: 100,
            inject_time: SimTime::ZERO,
            ingress_node: NodeId(1),
            egress_node: NodeId(3),
            metadata: vec![],
            ctrl_flags: 0,
        }
    }

    const AT: Location = Location::IngressPort(Port::Access);

    fn run(plane: &mut ProbePlane, pkts: &mut [Packet], t0: u64) -> Vec<ProbeEmission> {
        let mut out = vec![];
        for (i, p) in pkts.iter_mut().enumerate() {
            plane.process_at_attach(
                NodeId(1),
                AT,
                Observation::Transit,
                p,
                SimTime(t0 + i as u64),
                &mut out,
            );
        }
        out
    }

    fn install(plane: &mut ProbePlane, kind: ProbeKind) -> ProbeId {
        plane
            .install_probe(
                &topo(),
                AttachPoint::new(NodeId(1), AT),
                ProbeSpec::new(kind),
                SimTime::ZERO,
            )
            .unwrap()
    }

    #[test]
    fn attach_validation() {
        let mut plane = ProbePlane::new();
        let t = topo();
        let spec = ProbeSpec::new(ProbeKind::Filter);
        // link 1 joins nodes 2 and 3, not 1
        let bad = AttachPoint::new(NodeId(1), Location::Queue(LinkId(1)));
        assert_eq!(
            plane.install_probe(&t, bad, spec.clone(), SimTime::ZERO),
            Err(ProbeError::InvalidAttachPoint(bad))
        );
        let missing = AttachPoint::new(NodeId(1), Location::Queue(LinkId(7)));
        assert!(plane
            .install_probe(&t, missing, spec.clone(), SimTime::ZERO)
            .is_err());
        let ok = AttachPoint::new(NodeId(2), Location::EgressPort(Port::Link(LinkId(1))));
        assert!(plane.install_probe(&t, ok, spec, SimTime::ZERO).is_ok());
    }

    #[test]
    fn idle_counter_reads_empty() {
        let mut plane = ProbePlane::new();
        let id = install(
            &mut plane,
            ProbeKind::Counter {
                group_by: GroupBy::Flow,
                latency_from: None,
            },
        );
        assert!(plane.read_and_reset(id, SimTime(5)).unwrap().cells.is_empty());
    }

    #[test]
    fn counter_groups_and_resets() {
        let mut plane = ProbePlane::new();
        let id = install(
            &mut plane,
            ProbeKind::Counter {
                group_by: GroupBy::Flow,
                latency_from: None,
            },
        );
        let mut pkts: Vec<Packet> = (0..5).map(|i| pkt(i, 1)).chain((5..12).map(|i| pkt(i, 2))).collect();
        assert!(run(&mut plane, &mut pkts, 0).is_empty());
        let snap = plane.read_and_reset(id, SimTime(100)).unwrap();
        assert_eq!(snap.cells.len(), 2);
        let counts: Vec<u64> = snap.cells.iter().map(|c| c.cell.packets).collect();
        assert_eq!(counts, vec![5, 7]);
        assert_eq!(snap.get(&GroupKey::Flow(pkt(0, 2).flow)).unwrap().bytes, 700);
        assert!(plane.read_and_reset(id, SimTime(101)).unwrap().cells.is_empty());
    }

    #[test]
    fn read_on_non_counter() {
        let mut plane = ProbePlane::new();
        let id = install(&mut plane, ProbeKind::Filter);
        assert_eq!(
            plane.read_and_reset(id, SimTime(1)),
            Err(ProbeError::WrongProbeKind(id, "filter"))
        );
    }

    #[test]
    fn remove_semantics() {
        let mut plane = ProbePlane::new();
        let id = install(&mut plane, ProbeKind::Filter);
        plane.remove_probe(NodeId(1), id, SimTime(0)).unwrap();
        let mut pkts = vec![pkt(0, 1)];
        assert!(run(&mut plane, &mut pkts, 0).is_empty());
        assert_eq!(
            plane.remove_probe(NodeId(1), id, SimTime(0)),
            Err(ProbeError::UnknownProbe(id, NodeId(1)))
        );
    }

    #[test]
    fn sampler_every_nth() {
        let mut plane = ProbePlane::new();
        install(&mut plane, ProbeKind::Sampler { n: 3 });
        let mut pkts: Vec<Packet> = (0..10).map(|i| pkt(i, 1)).collect();
        let out = run(&mut plane, &mut pkts, 0);
        let seqs: Vec<u64> = out
            .iter()
            .map(|e| match &e.payload {
                EmissionPayload::Sample { packet } => packet.seq + 1,
                _ => panic!(),
            })
            .collect();
        assert_eq!(seqs, vec![3, 6, 9]);

        let mut plane = ProbePlane::new();
        install(&mut plane, ProbeKind::Sampler { n: 1 });
        assert_eq!(run(&mut plane, &mut pkts, 0).len(), 10);
    }

    #[test]
    fn label_and_timestamp_write_metadata() {
        let mut plane = ProbePlane::new();
        install(&mut plane, ProbeKind::Label { tag: "in".into() });
        install(&mut plane, ProbeKind::Timestamp { tag: "ts".into() });
        let mut pkts = vec![pkt(0, 1)];
        run(&mut plane, &mut pkts, 42);
        assert_eq!(pkts[0].meta("in"), Some(1));
        assert_eq!(pkts[0].meta("ts"), Some(42));
        assert_eq!(pkts[0].metadata[0].tag, "in");
    }

    #[test]
    fn counter_latency_from_timestamp() {
        let mut plane = ProbePlane::new();
        let id = install(
            &mut plane,
            ProbeKind::Counter {
                group_by: GroupBy::All,
                latency_from: Some("ts".into()),
            },
        );
        let mut pkts: Vec<Packet> = (0..3)
            .map(|i| {
                let mut p = pkt(i, 1);
                p.push_meta("ts", 10 * i);
                p
            })
            .collect();
        // processed at t = 100, 101, 102 -> latencies 100, 91, 82
        run(&mut plane, &mut pkts, 100);
        let snap = plane.read_and_reset(id, SimTime(200)).unwrap();
        let cell = snap.get(&GroupKey::All).unwrap();
        assert_eq!(cell.min_latency, Some(SimTime(82)));
        assert_eq!(cell.max_latency, Some(SimTime(100)));
    }

    #[test]
    fn meter_fires_once_per_window_above_threshold() {
        let mut plane = ProbePlane::new();
        // 1000 us window, 600 kbps -> more than 75 bytes per window
        install(
            &mut plane,
            ProbeKind::Meter {
                threshold_bps: 600_000,
                window_us: 1_000,
            },
        );
        let mut out = vec![];
        for (i, t) in [10u64, 20, 1500, 2100, 2200].iter().enumerate() {
            let mut p = pkt(i as u64, 1);
            p.size_bytes = if *t == 1500 { 64 } else { 100 };
            plane.process_at_attach(NodeId(1), AT, Observation::Transit, &mut p, SimTime(*t), &mut out);
        }
        let windows: Vec<u64> = out
            .iter()
            .map(|e| match e.payload {
                EmissionPayload::MeterExceeded { window, .. } => window,
                _ => panic!(),
            })
            .collect();
        assert_eq!(windows, vec![0, 2]);
    }

    #[test]
    fn fsm_probe_keys_state_per_flow() {
        let mut plane = ProbePlane::new();
        install(
            &mut plane,
            ProbeKind::Fsm {
                table: FsmTable::consecutive(Predicate::True, 2),
            },
        );
        let mut pkts = vec![pkt(0, 1), pkt(1, 2), pkt(2, 1), pkt(3, 2)];
        let out = run(&mut plane, &mut pkts, 0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].time, SimTime(2));
    }

    #[test]
    fn drop_notify_only_on_drops() {
        let mut plane = ProbePlane::new();
        let t = topo();
        let q = Location::Queue(LinkId(0));
        plane
            .install_probe(&t, AttachPoint::new(NodeId(1), q), ProbeSpec::new(ProbeKind::DropNotify), SimTime::ZERO)
            .unwrap();
        let mut out = vec![];
        let mut p = pkt(0, 1);
        plane.process_at_attach(NodeId(1), q, Observation::Transit, &mut p, SimTime(1), &mut out);
        assert!(out.is_empty());
        plane.process_at_attach(NodeId(1), q, Observation::Drop { link: LinkId(0) }, &mut p, SimTime(2), &mut out);
        assert!(matches!(out[0].payload, EmissionPayload::DropNotice { port: LinkId(0), .. }));
    }
}
