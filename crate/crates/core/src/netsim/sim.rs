use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topology::{Port, RoutingTable, Topology};
use super::trace::{DropRecord, PacketRecord, Trace, TraceEvent, TraceKind};
use super::traffic::{TrafficError, TrafficSpec};
use crate::model::{LinkId, NodeId, Packet, SimTime};
use crate::probes::{
    AttachPoint, CounterSnapshot, Location, Observation, ProbeEmission, ProbeError, ProbeId,
    ProbePlane, ProbeSpec,
};

/// Processing class for events sharing a timestamp. Controller commands run
/// first, then local-processor work, then packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Command = 0,
    Local = 1,
    Data = 2,
}

/// Total order over scheduled events: `(time, phase, node, seq, order)`.
/// `order` is a per-queue insertion counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub time: SimTime,
    pub phase: Phase,
    pub node: NodeId,
    pub seq: u64,
    pub order: u64,
}

#[derive(Debug)]
enum DataEvent {
    Arrive {
        node: NodeId,
        port: Port,
        packet: Packet,
    },
    TxDone {
        node: NodeId,
        link: LinkId,
    },
}

#[derive(Debug)]
struct Scheduled {
    key: EventKey,
    event: DataEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug, Default)]
struct OutPort {
    queue: VecDeque<Packet>,
    /// Bytes accepted and not yet fully transmitted.
    occupancy: u64,
    busy: bool,
}

/// A delivered packet as it left the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub time: SimTime,
    pub node: NodeId,
    pub packet: Packet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FabricOptions {
    pub record_trace: bool,
}

/// Packet-level data plane: drop-tail output queues per link direction,
/// serialization and propagation delay, hop-count forwarding, and the
/// probe plane hooked into every port, queue and flow table.
#[derive(Debug)]
pub struct Fabric {
    topo: Topology,
    routes: RoutingTable,
    probes: ProbePlane,
    heap: BinaryHeap<Reverse<Scheduled>>,
    injections: Vec<Packet>,
    next_injection: usize,
    ports: Vec<OutPort>,
    order: u64,
    now: SimTime,
    in_flight: u64,
    delivered: Vec<Delivery>,
    drops: Vec<DropRecord>,
    emissions: Vec<ProbeEmission>,
    trace: Option<Vec<TraceEvent>>,
}

impl Fabric {
    pub fn new(
        topo: Topology,
        routes: RoutingTable,
        traffic: &TrafficSpec,
        options: FabricOptions,
    ) -> Result<Self, TrafficError> {
        traffic.validate(&topo)?;
        let ports = (0..topo.links().len() * 2)
            .map(|_| OutPort::default())
            .collect();
        Ok(Fabric {
            injections: traffic.packets(),
            topo,
            routes,
            probes: ProbePlane::new(),
            heap: BinaryHeap::new(),
            next_injection: 0,
            ports,
            order: 0,
            now: SimTime::ZERO,
            in_flight: 0,
            delivered: Vec::new(),
            drops: Vec::new(),
            emissions: Vec::new(),
            trace: options.record_trace.then(Vec::new),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Moves the clock forward without processing packets. Callers must
    /// not skip past a pending data event.
    pub fn advance_clock(&mut self, t: SimTime) {
        debug_assert!(self.peek_key().is_none_or(|k| k.time >= t));
        if t > self.now {
            self.now = t;
        }
    }

    pub fn injected(&self) -> u64 {
        self.next_injection as u64
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn delivered(&self) -> &[Delivery] {
        &self.delivered
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }

    pub fn take_emissions(&mut self) -> Vec<ProbeEmission> {
        std::mem::take(&mut self.emissions)
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Trace {
        Trace {
            events: self.trace.take().unwrap_or_default(),
        }
    }

    pub fn probes(&self) -> &ProbePlane {
        &self.probes
    }

    pub fn install_probe(
        &mut self,
        attach: AttachPoint,
        spec: ProbeSpec,
    ) -> Result<ProbeId, ProbeError> {
        self.probes
            .install_probe(&self.topo, attach, spec, self.now)
    }

    pub fn remove_probe(&mut self, node: NodeId, id: ProbeId) -> Result<(), ProbeError> {
        self.probes.remove_probe(node, id, self.now)
    }

    pub fn read_and_reset(&mut self, id: ProbeId) -> Result<CounterSnapshot, ProbeError> {
        self.probes.read_and_reset(id, self.now)
    }

    pub fn peek_key(&self) -> Option<EventKey> {
        let inj = self.injections.get(self.next_injection).map(|p| EventKey {
            time: p.inject_time,
            phase: Phase::Data,
            node: p.ingress_node,
            seq: p.seq,
            order: 0,
        });
        let queued = self.heap.peek().map(|Reverse(s)| s.key);
        match (inj, queued) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Processes the next data-plane event. Returns its key, or `None` when
    /// nothing is pending.
    pub fn step(&mut self) -> Option<EventKey> {
        let key = self.peek_key()?;
        debug_assert!(key.time >= self.now);
        self.now = key.time;
        let from_heap = self
            .heap
            .peek()
            .is_some_and(|Reverse(s)| s.key == key);
        if from_heap {
            let Reverse(s) = self.heap.pop().unwrap();
            match s.event {
                DataEvent::Arrive { node, port, packet } => self.arrive(node, port, packet),
                DataEvent::TxDone { node, link } => self.tx_done(node, link),
            }
        } else {
            let packet = self.injections[self.next_injection].clone();
            self.next_injection += 1;
            self.in_flight += 1;
            self.arrive(packet.ingress_node, Port::Access, packet);
        }
        Some(key)
    }

    fn schedule(&mut self, time: SimTime, node: NodeId, seq: u64, event: DataEvent) {
        self.order += 1;
        self.heap.push(Reverse(Scheduled {
            key: EventKey {
                time,
                phase: Phase::Data,
                node,
                seq,
                order: self.order,
            },
            event,
        }));
    }

    fn record(&mut self, node: NodeId, kind: TraceKind, packet: &Packet) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEvent {
                time: self.now,
                node,
                kind,
                packet: PacketRecord::from(packet),
            });
        }
    }

    fn port_index(&self, node: NodeId, link: LinkId) -> usize {
        let l = &self.topo.links()[link.0 as usize];
        link.0 as usize * 2 + usize::from(node == l.b)
    }

    fn arrive(&mut self, node: NodeId, port: Port, mut packet: Packet) {
        let now = self.now;
        self.record(node, TraceKind::Ingress(port), &packet);
        let probes = &mut self.probes;
        let out = &mut self.emissions;
        probes.process_at_attach(
            node,
            Location::IngressPort(port),
            Observation::Transit,
            &mut packet,
            now,
            out,
        );
        probes.process_at_attach(
            node,
            Location::FlowTable,
            Observation::Transit,
            &mut packet,
            now,
            out,
        );

        if packet.egress_node == node {
            probes.process_at_attach(
                node,
                Location::EgressPort(Port::Access),
                Observation::Transit,
                &mut packet,
                now,
                out,
            );
            self.record(node, TraceKind::Deliver, &packet);
            self.in_flight -= 1;
            self.delivered.push(Delivery {
                time: now,
                node,
                packet,
            });
            return;
        }

        let next = self
            .routes
            .next_hop(node, packet.egress_node)
            .expect("topology is connected");
        let link = self.topo.link_between(node, next).expect("next hop is adjacent");
        let buffer = self.topo.links()[link.0 as usize].buffer_bytes;
        let idx = self.port_index(node, link);
        let size = u64::from(packet.size_bytes);

        if self.ports[idx].occupancy + size > buffer {
            self.record(node, TraceKind::Drop(link), &packet);
            self.drops.push(DropRecord {
                node,
                port: link,
                flow: packet.flow,
                time: now,
                seq: packet.seq,
            });
            self.in_flight -= 1;
            self.probes.process_at_attach(
                node,
                Location::Queue(link),
                Observation::Drop { link },
                &mut packet,
                now,
                &mut self.emissions,
            );
            return;
        }

        self.probes.process_at_attach(
            node,
            Location::Queue(link),
            Observation::Transit,
            &mut packet,
            now,
            &mut self.emissions,
        );
        let port = &mut self.ports[idx];
        port.occupancy += size;
        port.queue.push_back(packet);
        if !port.busy {
            port.busy = true;
            self.start_tx(node, link, idx);
        }
    }

    fn start_tx(&mut self, node: NodeId, link: LinkId, idx: usize) {
        let head = self.ports[idx].queue.front().expect("queue non-empty");
        let (size, seq) = (head.size_bytes, head.seq);
        let done = self.now + self.topo.links()[link.0 as usize].serialization_delay(size);
        self.schedule(done, node, seq, DataEvent::TxDone { node, link });
    }

    fn tx_done(&mut self, node: NodeId, link: LinkId) {
        let idx = self.port_index(node, link);
        let port = &mut self.ports[idx];
        let mut packet = port.queue.pop_front().expect("transmitting packet");
        port.occupancy -= u64::from(packet.size_bytes);
        let more = !port.queue.is_empty();
        port.busy = more;

        self.probes.process_at_attach(
            node,
            Location::EgressPort(Port::Link(link)),
            Observation::Transit,
            &mut packet,
            self.now,
            &mut self.emissions,
        );
        self.record(node, TraceKind::Depart(link), &packet);
        let spec = &self.topo.links()[link.0 as usize];
        let peer = spec.peer(node).expect("link incident to node");
        let at = self.now + spec.propagation_delay;
        let seq = packet.seq;
        self.schedule(
            at,
            peer,
            seq,
            DataEvent::Arrive {
                node: peer,
                port: Port::Link(link),
                packet,
            },
        );
        if more {
            self.start_tx(node, link, idx);
        }
    }
}

/// A probe to install during a standalone run, optionally removed later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInstall {
    pub attach: AttachPoint,
    pub spec: ProbeSpec,
    #[serde(default)]
    pub at: SimTime,
    #[serde(default)]
    pub remove_at: Option<SimTime>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run horizon must be positive")]
    ZeroHorizon,
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug)]
pub struct RunOutput {
    pub delivered: Vec<Delivery>,
    pub drops: Vec<DropRecord>,
    pub emissions: Vec<ProbeEmission>,
    /// Ids assigned to the requested probes, in request order.
    pub probe_ids: Vec<ProbeId>,
    /// Counter contents at the horizon for counters still installed.
    pub final_counters: Vec<CounterSnapshot>,
    pub injected: u64,
    pub in_flight: u64,
    pub final_clock: SimTime,
    pub trace: Trace,
}

/// Runs the data plane alone, processing every event with time `<= until`.
pub fn run(
    topo: &Topology,
    routes: &RoutingTable,
    traffic: &TrafficSpec,
    probes: &[ProbeInstall],
    until: SimTime,
) -> Result<RunOutput, RunError> {
    if until == SimTime::ZERO {
        return Err(RunError::ZeroHorizon);
    }
    let mut fabric = Fabric::new(
        topo.clone(),
        routes.clone(),
        traffic,
        FabricOptions { record_trace: true },
    )?;

    // (time, install-before-remove, request index)
    let mut commands: Vec<(SimTime, u8, usize)> = Vec::new();
    for (i, p) in probes.iter().enumerate() {
        commands.push((p.at, 0, i));
        if let Some(r) = p.remove_at {
            commands.push((r.max(p.at), 1, i));
        }
    }
    commands.sort();
    let mut ids: Vec<Option<ProbeId>> = vec![None; probes.len()];
    let mut cmd = commands.into_iter().peekable();

    loop {
        let next_cmd = cmd.peek().map(|c| c.0).filter(|&t| t <= until);
        let next_data = fabric.peek_key().map(|k| k.time).filter(|&t| t <= until);
        match (next_cmd, next_data) {
            (Some(tc), td) if td.is_none_or(|td| tc <= td) => {
                let (t, op, i) = cmd.next().unwrap();
                fabric.advance_clock(t);
                let req = &probes[i];
                if op == 0 {
                    ids[i] = Some(fabric.install_probe(req.attach, req.spec.clone())?);
                } else if let Some(id) = ids[i] {
                    fabric.remove_probe(req.attach.node, id)?;
                }
            }
            (_, Some(_)) => {
                fabric.step();
            }
            _ => break,
        }
    }
    fabric.advance_clock(until);

    let removed: Vec<bool> = probes.iter().map(|p| p.remove_at.is_some()).collect();
    let mut final_counters = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        if let (Some(id), false) = (id, removed[i]) {
            if let Ok(snap) = fabric.read_and_reset(*id) {
                final_counters.push(snap);
            }
        }
    }
    Ok(RunOutput {
        probe_ids: ids.into_iter().flatten().collect(),
        final_counters,
        emissions: fabric.take_emissions(),
        injected: fabric.injected(),
        in_flight: fabric.in_flight(),
        final_clock: fabric.now(),
        trace: fabric.take_trace(),
        delivered: std::mem::take(&mut fabric.delivered),
        drops: std::mem::take(&mut fabric.drops),
    })
}
