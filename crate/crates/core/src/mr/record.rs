use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{FlowKey, LinkId, NodeId, SimTime, WindowId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub String);

impl JobId {
    pub fn new(s: impl Into<String>) -> Self {
        JobId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Intermediate key. The canonical encoding (variant tag byte followed by
/// big-endian fields) sorts the same way as the derived `Ord`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKey {
    Server(u32),
    Pair { src: NodeId, dst: NodeId },
    Flow(FlowKey),
    Port { node: NodeId, link: LinkId },
    Path { ingress: NodeId, egress: NodeId },
}

impl RecordKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + FlowKey::ENCODED_LEN);
        match self {
            RecordKey::Server(addr) => {
                out.push(0);
                out.extend_from_slice(&addr.to_be_bytes());
            }
            RecordKey::Pair { src, dst } => {
                out.push(1);
                out.extend_from_slice(&src.0.to_be_bytes());
                out.extend_from_slice(&dst.0.to_be_bytes());
            }
            RecordKey::Flow(f) => {
                out.push(2);
                f.encode_into(&mut out);
            }
            RecordKey::Port { node, link } => {
                out.push(3);
                out.extend_from_slice(&node.0.to_be_bytes());
                out.extend_from_slice(&link.0.to_be_bytes());
            }
            RecordKey::Path { ingress, egress } => {
                out.push(4);
                out.extend_from_slice(&ingress.0.to_be_bytes());
                out.extend_from_slice(&egress.0.to_be_bytes());
            }
        }
        out
    }
}

/// Traffic-matrix cell payload: counts plus optional latency envelope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellValue {
    pub packets: u64,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_latency: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Count(u64),
    Cell(CellValue),
    /// Heavy-hitter estimate: upper-bound counts and the maximum overcount.
    Estimate { packets: u64, bytes: u64, error: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueMismatch;

fn min_opt(a: Option<SimTime>, b: Option<SimTime>) -> Option<SimTime> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

fn max_opt(a: Option<SimTime>, b: Option<SimTime>) -> Option<SimTime> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    }
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Count(_) => ValueKind::Count,
            Value::Cell(_) => ValueKind::Cell,
            Value::Estimate { .. } => ValueKind::Estimate,
        }
    }

    /// Associative, commutative fold of two values of the same kind.
    pub fn merge(&mut self, other: &Value) -> Result<(), ValueMismatch> {
        match (self, other) {
            (Value::Count(a), Value::Count(b)) => *a += b,
            (Value::Cell(a), Value::Cell(b)) => {
                a.packets += b.packets;
                a.bytes += b.bytes;
                a.min_latency = min_opt(a.min_latency, b.min_latency);
                a.max_latency = max_opt(a.max_latency, b.max_latency);
            }
            (
                Value::Estimate {
                    packets,
                    bytes,
                    error,
                },
                Value::Estimate {
                    packets: p,
                    bytes: b,
                    error: e,
                },
            ) => {
                *packets += p;
                *bytes += b;
                *error += e;
            }
            _ => return Err(ValueMismatch),
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        match self {
            Value::Count(c) => *c,
            Value::Cell(c) => c.packets,
            Value::Estimate { packets, .. } => *packets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Count,
    Cell,
    Estimate,
}

/// One mapper output pair on its way to a reducer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediateRecord {
    pub job: JobId,
    pub window: WindowId,
    pub key: RecordKey,
    pub value: Value,
    pub mapper: NodeId,
    pub seq: u64,
}

/// End-of-window marker, sent once per (job, window, mapper) to every reducer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowClose {
    pub job: JobId,
    pub window: WindowId,
    pub mapper: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShuffleMessage {
    Record(IntermediateRecord),
    Close(WindowClose),
}

impl ShuffleMessage {
    pub fn job(&self) -> &JobId {
        match self {
            ShuffleMessage::Record(r) => &r.job,
            ShuffleMessage::Close(c) => &c.job,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub key: RecordKey,
    pub value: Value,
}

/// Finalized output of one reducer for one window; entries sorted by key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowedResult {
    pub job: JobId,
    pub window: WindowId,
    pub reducer: NodeId,
    pub entries: Vec<ResultEntry>,
    #[serde(rename = "finalized_at_us")]
    pub finalized_at: SimTime,
}
