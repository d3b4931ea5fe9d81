//! Per-hop event log and its line-oriented export format.
//!
//! One header line, then one tab-separated record per event:
//!
//! ```text
//! time_us kind node port seq src_addr dst_addr src_port dst_port proto size_bytes ingress egress inject_us ctrl_flags
//! ```
//!
//! `kind` is one of `ingress`, `depart`, `drop`, `deliver`. `port` is the
//! arrival port for `ingress` (`access` or a link index), the output link for
//! `depart` and `drop`, and `access` for `deliver`. In-band metadata is not
//! exported.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topology::Port;
use crate::model::{FlowKey, LinkId, NodeId, Packet, SimTime};

pub const TRACE_HEADER: &str = "#netmr-trace v1\ttime_us\tkind\tnode\tport\tseq\tsrc_addr\tdst_addr\tsrc_port\tdst_port\tproto\tsize_bytes\tingress\tegress\tinject_us\tctrl_flags";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Arrival at a node, from outside (`Access`) or over a link.
    Ingress(Port),
    Depart(LinkId),
    Drop(LinkId),
    Deliver,
}

/// Packet fields relevant to the trace; metadata excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketRecord {
    pub seq: u64,
    pub flow: FlowKey,
    pub size_bytes: u32,
    pub ingress_node: NodeId,
    pub egress_node: NodeId,
    pub inject_time: SimTime,
    pub ctrl_flags: u8,
}

impl From<&Packet> for PacketRecord {
    fn from(p: &Packet) -> Self {
        PacketRecord {
            seq: p.seq,
            flow: p.flow,
            size_bytes: p.size_bytes,
            ingress_node: p.ingress_node,
            egress_node: p.egress_node,
            inject_time: p.inject_time,
            ctrl_flags: p.ctrl_flags,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: TraceKind,
    pub packet: PacketRecord,
}

/// One record per dropped packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DropRecord {
    pub node: NodeId,
    pub port: LinkId,
    pub flow: FlowKey,
    pub time: SimTime,
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("missing or unknown header")]
    Header,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

impl Trace {
    pub fn drops(&self) -> impl Iterator<Item = DropRecord> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            TraceKind::Drop(port) => Some(DropRecord {
                node: e.node,
                port,
                flow: e.packet.flow,
                time: e.time,
                seq: e.packet.seq,
            }),
            _ => None,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        let mut line = String::with_capacity(128);
        for e in &self.events {
            line.clear();
            format_event(e, &mut line);
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("trace is ascii")
    }

    pub fn parse(text: &str) -> Result<Trace, TraceParseError> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(TraceParseError::Header);
        }
        let events = lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                parse_event(l).map_err(|reason| TraceParseError::Line { line: i + 2, reason })
            })
            .collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }
}

fn format_event(e: &TraceEvent, out: &mut String) {
    let (kind, port) = match e.kind {
        TraceKind::Ingress(p) => ("ingress", p.to_string()),
        TraceKind::Depart(l) => ("depart", l.0.to_string()),
        TraceKind::Drop(l) => ("drop", l.0.to_string()),
        TraceKind::Deliver => ("deliver", "access".to_owned()),
    };
    let p = &e.packet;
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        e.time.0,
        kind,
        e.node.0,
        port,
        p.seq,
        p.flow.src_addr,
        p.flow.dst_addr,
        p.flow.src_port,
        p.flow.dst_port,
        p.flow.proto,
        p.size_bytes,
        p.ingress_node.0,
        p.egress_node.0,
        p.inject_time.0,
        p.ctrl_flags
    );
}

fn parse_event(line: &str) -> Result<TraceEvent, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 15 {
        return Err(format!("expected 15 fields, found {}", f.len()));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("bad {name}: {s:?}"))
    }
    let link = |s: &str| num::<u32>(s, "port").map(LinkId);
    let kind = match f[1] {
        "ingress" if f[3] == "access" => TraceKind::Ingress(Port::Access),
        "ingress" => TraceKind::Ingress(Port::Link(link(f[3])?)),
        "depart" => TraceKind::Depart(link(f[3])?),
        "drop" => TraceKind::Drop(link(f[3])?),
        "deliver" => TraceKind::Deliver,
        other => return Err(format!("unknown kind {other:?}")),
    };
    Ok(TraceEvent {
        time: SimTime(num(f[0], "time")?),
        node: NodeId(num(f[2], "node")?),
        kind,
        packet: PacketRecord {
            seq: num(f[4], "seq")?,
            flow: FlowKey {
                src_addr: num(f[5], "src_addr")?,
                dst_addr: num(f[6], "dst_addr")?,
                src_port: num(f[7], "src_port")?,
                dst_port: num(f[8], "dst_port")?,
                proto: num(f[9], "proto")?,
            },
            size_bytes: num(f[10], "size")?,
            ingress_node: NodeId(num(f[11], "ingress")?),
            egress_node: NodeId(num(f[12], "egress")?),
            inject_time: SimTime(num(f[13], "inject")?),
            ctrl_flags: num(f[14], "flags")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_event() -> impl Strategy<Value = TraceEvent> {
        let kind = prop_oneof![
            Just(TraceKind::Ingress(Port::Access)),
            any::<u32>().prop_map(|l| TraceKind::Ingress(Port::Link(LinkId(l)))),
            any::<u32>().prop_map(|l| TraceKind::Depart(LinkId(l))),
            any::<u32>().prop_map(|l| TraceKind::Drop(LinkId(l))),
            Just(TraceKind::Deliver),
        ];
        (
            any::<u64>(),
            any::<u32>(),
            kind,
            any::<(u64, u32, u32, u16, u16, u8)>(),
            any::<(u32, u32, u32, u64, u8)>(),
        )
            .prop_map(|(t, n, kind, (seq, s, d, sp, dp, pr), (size, i, e, inj, fl))| TraceEvent {
                time: SimTime(t),
                node: NodeId(n),
                kind,
                packet: PacketRecord {
                    seq,
                    flow: FlowKey::new(s, d, sp, dp, pr),
                    size_bytes: size,
                    ingress_node: NodeId(i),
                    egress_node: NodeId(e),
                    inject_time: SimTime(inj),
                    ctrl_flags: fl,
                },
            })
    }

    proptest! {
        #[test]
        fn export_parses_back(events in proptest::collection::vec(arb_event(), 0..20)) {
            let trace = Trace { events };
            prop_assert_eq!(Trace::parse(&trace.to_text()).unwrap(), trace);
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(Trace::default().to_text(), format!("{TRACE_HEADER}\n"));
        assert_eq!(Trace::parse("nope"), Err(TraceParseError::Header));
    }
}
