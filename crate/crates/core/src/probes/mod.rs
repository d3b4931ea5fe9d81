//! Simulated forwarding-chip probes.
//!
//! Probes attach to a node's ports, output queues or flow table, observe
//! packets as they pass, and hand events and counter snapshots to the node's
//! local processor. They never change forwarding; the only packet mutation
//! they perform is appending in-band metadata (labels and timestamps).

mod fsm;
mod plane;
mod predicate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fsm::{fsm_step, FsmTable, StateId, Transition};
pub use plane::{Observation, ProbePlane};
pub use predicate::{CmpOp, Field, Predicate};

use crate::model::{FlowKey, LinkId, NodeId, Packet, SimTime};
use crate::netsim::Port;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProbeId(pub u64);

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    IngressPort(Port),
    EgressPort(Port),
    /// Output queue towards a link.
    Queue(LinkId),
    FlowTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttachPoint {
    pub node: NodeId,
    pub location: Location,
}

impl AttachPoint {
    pub fn new(node: NodeId, location: Location) -> Self {
        AttachPoint { node, location }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    All,
    Flow,
    SrcAddr,
    DstAddr,
    Meta(String),
}

impl GroupBy {
    pub fn key(&self, p: &Packet) -> GroupKey {
        match self {
            GroupBy::All => GroupKey::All,
            GroupBy::Flow => GroupKey::Flow(p.flow),
            GroupBy::SrcAddr => GroupKey::Addr(p.flow.src_addr),
            GroupBy::DstAddr => GroupKey::Addr(p.flow.dst_addr),
            GroupBy::Meta(tag) => GroupKey::Meta(p.meta(tag)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    All,
    Flow(FlowKey),
    Addr(u32),
    Meta(Option<u64>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    Counter {
        group_by: GroupBy,
        /// Timestamp tag; when set, cells also track min/max of `now - tag`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency_from: Option<String>,
    },
    /// Fires once per epoch-aligned jump window whose average rate exceeds
    /// the threshold.
    Meter {
        threshold_bps: u64,
        window_us: u64,
    },
    Filter,
    /// Deterministic 1-in-N sampling.
    Sampler {
        n: u64,
    },
    Fsm {
        table: FsmTable,
    },
    /// Appends `(tag, node id)`.
    Label {
        tag: String,
    },
    /// Appends `(tag, now)`.
    Timestamp {
        tag: String,
    },
    DropNotify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    #[serde(default)]
    pub predicate: Predicate,
    #[serde(flatten)]
    pub kind: ProbeKind,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind) -> Self {
        ProbeSpec {
            predicate: Predicate::True,
            kind,
        }
    }

    pub fn with_predicate(mut self, predicate: Predicate) -> Self {
        self.predicate = predicate;
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ProbeKind::Counter { .. } => "counter",
            ProbeKind::Meter { .. } => "meter",
            ProbeKind::Filter => "filter",
            ProbeKind::Sampler { .. } => "sampler",
            ProbeKind::Fsm { .. } => "fsm",
            ProbeKind::Label { .. } => "label",
            ProbeKind::Timestamp { .. } => "timestamp",
            ProbeKind::DropNotify => "drop_notify",
        }
    }

    /// Rewrites every metadata tag the probe reads or writes.
    pub fn map_tags(&mut self, f: &impl Fn(&str) -> String) {
        self.predicate.map_tags(f);
        match &mut self.kind {
            ProbeKind::Counter {
                group_by,
                latency_from,
            } => {
                if let GroupBy::Meta(tag) = group_by {
                    *tag = f(tag);
                }
                if let Some(tag) = latency_from {
                    *tag = f(tag);
                }
            }
            ProbeKind::Label { tag } | ProbeKind::Timestamp { tag } => *tag = f(tag),
            ProbeKind::Fsm { table } => table.map_tags(f),
            ProbeKind::Meter { .. }
            | ProbeKind::Filter
            | ProbeKind::Sampler { .. }
            | ProbeKind::DropNotify => {}
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterCell {
    pub packets: u64,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_latency: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterEntry {
    pub group: GroupKey,
    pub cell: CounterCell,
}

/// Counter contents accumulated since the previous reset, sorted by group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub probe: ProbeId,
    pub at: SimTime,
    pub cells: Vec<CounterEntry>,
}

impl CounterSnapshot {
    pub fn get(&self, group: &GroupKey) -> Option<&CounterCell> {
        self.cells
            .binary_search_by(|e| e.group.cmp(group))
            .ok()
            .map(|i| &self.cells[i].cell)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmissionPayload {
    CounterSnapshot(CounterSnapshot),
    MeterExceeded { window: u64, rate_bps: u64 },
    FilterMatch { flow: FlowKey },
    Sample { packet: Packet },
    FsmEvent { flow: FlowKey, state: StateId },
    DropNotice { packet: Packet, port: LinkId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeEmission {
    pub probe: ProbeId,
    pub node: NodeId,
    pub time: SimTime,
    pub payload: EmissionPayload,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("invalid attach point {0:?}")]
    InvalidAttachPoint(AttachPoint),
    #[error("unknown probe {0} at {1}")]
    UnknownProbe(ProbeId, NodeId),
    #[error("probe {0} is not installed")]
    NotInstalled(ProbeId),
    #[error("probe {0} is a {1}, not a counter")]
    WrongProbeKind(ProbeId, &'static str),
    #[error("invalid probe spec: {0}")]
    InvalidSpec(String),
}
