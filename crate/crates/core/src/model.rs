//! Shared domain types: simulated time, node and flow identity, packets,
//! window policies and the shuffle partitioner.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer microseconds. Also used for durations.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of a bidirectional link in its topology.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

/// IPv4-style 5-tuple. The derived ordering is lexicographic in field order.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct FlowKey {
    pub src_addr: u32,
    pub dst_addr: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub const ENCODED_LEN: usize = 13;

    pub fn new(src_addr: u32, dst_addr: u32, src_port: u16, dst_port: u16, proto: u8) -> Self {
        FlowKey {
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            proto,
        }
    }

    /// Big-endian field concatenation; byte order agrees with `Ord`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src_addr.to_be_bytes());
        out.extend_from_slice(&self.dst_addr.to_be_bytes());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.push(self.proto);
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}/{}",
            self.src_addr, self.src_port, self.dst_addr, self.dst_port, self.proto
        )
    }
}

pub const MIN_PACKET_BYTES: u32 = 64;
pub const MAX_PACKET_BYTES: u32 = 9216;

/// One in-band metadata entry written by a probe.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetaEntry {
    pub tag: String,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub seq: u64,
    pub flow: FlowKey,
    pub size_bytes: u32,
    pub inject_time: SimTime,
    pub ingress_node: NodeId,
    /// Where the network delivers the packet; routing looks only at this.
    pub egress_node: NodeId,
    #[serde(default)]
    pub metadata: Vec<MetaEntry>,
    #[serde(default)]
    pub ctrl_flags: u8,
}

impl Packet {
    /// First metadata value carrying `tag`.
    pub fn meta(&self, tag: &str) -> Option<u64> {
        self.metadata.iter().find(|m| m.tag == tag).map(|m| m.value)
    }

    pub fn push_meta(&mut self, tag: &str, value: u64) {
        self.metadata.push(MetaEntry {
            tag: tag.to_owned(),
            value,
        });
    }

    /// Copy with the in-band metadata stripped, for neutrality comparisons.
    pub fn without_metadata(&self) -> Packet {
        Packet {
            metadata: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn extract_flow_key(packet: &Packet) -> FlowKey {
    packet.flow
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Jump,
    Sliding,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("window length must be positive")]
    ZeroLength,
    #[error("window slide {slide} must satisfy 0 < slide <= length {length}")]
    BadSlide { slide: SimTime, length: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindowPolicy", into = "RawWindowPolicy")]
pub struct WindowPolicy {
    kind: WindowKind,
    length: SimTime,
    slide: SimTime,
}

impl WindowPolicy {
    pub fn jump(length: SimTime) -> Result<Self, WindowError> {
        if length.0 == 0 {
            return Err(WindowError::ZeroLength);
        }
        Ok(WindowPolicy {
            kind: WindowKind::Jump,
            length,
            slide: length,
        })
    }

    pub fn sliding(length: SimTime, slide: SimTime) -> Result<Self, WindowError> {
        if length.0 == 0 {
            return Err(WindowError::ZeroLength);
        }
        if slide.0 == 0 || slide > length {
            return Err(WindowError::BadSlide { slide, length });
        }
        Ok(WindowPolicy {
            kind: WindowKind::Sliding,
            length,
            slide,
        })
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn length(&self) -> SimTime {
        self.length
    }

    pub fn slide(&self) -> SimTime {
        self.slide
    }

    pub fn start(&self, w: WindowId) -> SimTime {
        SimTime(w.0 * self.slide.0)
    }

    pub fn end(&self, w: WindowId) -> SimTime {
        SimTime(w.0 * self.slide.0 + self.length.0)
    }

    pub fn contains(&self, w: WindowId, t: SimTime) -> bool {
        self.start(w) <= t && t < self.end(w)
    }

    /// First window whose start is at or after `t`.
    pub fn first_window_from(&self, t: SimTime) -> WindowId {
        WindowId(t.0.div_ceil(self.slide.0))
    }
}

#[derive(Serialize, Deserialize)]
struct RawWindowPolicy {
    kind: WindowKind,
    length_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slide_us: Option<u64>,
}

impl TryFrom<RawWindowPolicy> for WindowPolicy {
    type Error = WindowError;

    fn try_from(raw: RawWindowPolicy) -> Result<Self, WindowError> {
        match raw.kind {
            WindowKind::Jump => WindowPolicy::jump(SimTime(raw.length_us)),
            WindowKind::Sliding => WindowPolicy::sliding(
                SimTime(raw.length_us),
                SimTime(raw.slide_us.unwrap_or(raw.length_us)),
            ),
        }
    }
}

impl From<WindowPolicy> for RawWindowPolicy {
    fn from(p: WindowPolicy) -> Self {
        RawWindowPolicy {
            kind: p.kind,
            length_us: p.length.0,
            slide_us: match p.kind {
                WindowKind::Jump => None,
                WindowKind::Sliding => Some(p.slide.0),
            },
        }
    }
}

/// Window `i` covers `[i * slide, i * slide + length)`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct WindowId(pub u64);

/// Every window whose half-open interval contains `t`, ascending.
pub fn window_of(t: SimTime, policy: &WindowPolicy) -> Vec<WindowId> {
    let slide = policy.slide.0;
    let last = t.0 / slide;
    let first = if t.0 >= policy.length.0 {
        (t.0 - policy.length.0) / slide + 1
    } else {
        0
    };
    (first..=last).map(WindowId).collect()
}

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Reducer index for a shuffle key.
///
/// # Panics
/// Panics when `n_reducers` is zero.
pub fn partition_key(key_bytes: &[u8], n_reducers: usize) -> usize {
    assert!(n_reducers >= 1, "partition_key needs at least one reducer");
    (fnv1a64(key_bytes) % n_reducers as u64) as usize
}
