use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::job::MapOperatorSpec;
use super::record::{
    CellValue, IntermediateRecord, JobId, RecordKey, ResultEntry, ShuffleMessage, Value,
    WindowClose,
};
use super::space_saving::SpaceSaving;
use crate::model::{partition_key, window_of, FlowKey, NodeId, SimTime, WindowId, WindowPolicy};
use crate::probes::{EmissionPayload, GroupKey, ProbeEmission};

#[derive(Debug, Default)]
struct WindowBuffer {
    entries: BTreeMap<RecordKey, Value>,
    seen: BTreeSet<FlowKey>,
    sketch: Option<SpaceSaving<FlowKey>>,
}

impl WindowBuffer {
    fn add(&mut self, key: RecordKey, value: Value) {
        match self.entries.get_mut(&key) {
            Some(v) => v
                .merge(&value)
                .expect("a map operator emits a single value kind"),
            None => {
                self.entries.insert(key, value);
            }
        }
    }
}

/// A window buffer retained after its flush.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedWindow {
    pub window: WindowId,
    pub entries: Vec<ResultEntry>,
}

/// Local-processor half of a job on one mapper node.
#[derive(Debug)]
pub struct MapperState {
    job: JobId,
    node: NodeId,
    reducers: Vec<NodeId>,
    op: MapOperatorSpec,
    window: WindowPolicy,
    first_window: WindowId,
    /// Every window below this one has been flushed.
    next_flush: WindowId,
    buffers: BTreeMap<WindowId, WindowBuffer>,
    retention: usize,
    cache: VecDeque<CachedWindow>,
    seq: u64,
}

impl MapperState {
    pub fn new(
        job: JobId,
        node: NodeId,
        reducers: Vec<NodeId>,
        op: MapOperatorSpec,
        window: WindowPolicy,
        first_window: WindowId,
        retention: usize,
    ) -> Self {
        assert!(!reducers.is_empty(), "mapper needs a reducer");
        MapperState {
            job,
            node,
            reducers,
            op,
            window,
            first_window,
            next_flush: first_window,
            buffers: BTreeMap::new(),
            retention,
            cache: VecDeque::new(),
            seq: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn next_flush(&self) -> WindowId {
        self.next_flush
    }

    /// Applies the map operator to one emission. Contributions land in every
    /// open window containing the emission time; anything else is ignored.
    pub fn ingest(&mut self, em: &ProbeEmission) {
        let windows: Vec<WindowId> = window_of(em.time, &self.window)
            .into_iter()
            .filter(|&w| w >= self.next_flush)
            .collect();
        if windows.is_empty() {
            return;
        }
        let node = self.node;
        for w in windows {
            let buf = self.buffers.entry(w).or_default();
            match (&self.op, &em.payload) {
                (MapOperatorSpec::UniqueFlowCount, EmissionPayload::FilterMatch { flow }) => {
                    if buf.seen.insert(*flow) {
                        buf.add(RecordKey::Server(flow.dst_addr), Value::Count(1));
                    }
                }
                (
                    MapOperatorSpec::TrafficMatrixCell { .. },
                    EmissionPayload::CounterSnapshot(snap),
                ) => {
                    for e in &snap.cells {
                        let GroupKey::Meta(Some(src)) = e.group else {
                            continue;
                        };
                        let Ok(src) = u32::try_from(src) else {
                            continue;
                        };
                        buf.add(
                            RecordKey::Pair {
                                src: NodeId(src),
                                dst: node,
                            },
                            Value::Cell(CellValue {
                                packets: e.cell.packets,
                                bytes: e.cell.bytes,
                                min_latency: e.cell.min_latency,
                                max_latency: e.cell.max_latency,
                            }),
                        );
                    }
                }
                (
                    MapOperatorSpec::DropStats { ingress_tag },
                    EmissionPayload::DropNotice { packet, port },
                ) => {
                    buf.add(RecordKey::Flow(packet.flow), Value::Count(1));
                    buf.add(
                        RecordKey::Port {
                            node,
                            link: *port,
                        },
                        Value::Count(1),
                    );
                    if let Some(ingress) = packet.meta(ingress_tag).and_then(|v| u32::try_from(v).ok())
                    {
                        buf.add(
                            RecordKey::Path {
                                ingress: NodeId(ingress),
                                egress: packet.egress_node,
                            },
                            Value::Count(1),
                        );
                    }
                }
                (MapOperatorSpec::SpaceSaving { k_counters }, EmissionPayload::Sample { packet }) => {
                    buf.sketch
                        .get_or_insert_with(|| SpaceSaving::new(*k_counters))
                        .insert(packet.flow, u64::from(packet.size_bytes));
                }
                _ => log::debug!(
                    "job {}: map operator {} ignores {:?}",
                    self.job,
                    self.op.name(),
                    em.payload
                ),
            }
        }
    }

    /// Flushes window `w`: one record per buffered key to its designated
    /// reducer, then a close marker to every reducer. Returns
    /// `(destination, message)` pairs in send order.
    ///
    /// # Panics
    /// Panics if `now` has not reached the window end or windows are flushed
    /// out of order.
    pub fn flush(&mut self, w: WindowId, now: SimTime) -> Vec<(NodeId, ShuffleMessage)> {
        assert!(now >= self.window.end(w), "window {w:?} still open at {now}");
        assert_eq!(w, self.next_flush, "windows flush in order");
        self.next_flush = WindowId(w.0 + 1);
        let mut buf = self.buffers.remove(&w).unwrap_or_default();
        if let Some(sketch) = buf.sketch.take() {
            for (flow, c) in sketch.iter() {
                buf.add(
                    RecordKey::Flow(*flow),
                    Value::Estimate {
                        packets: c.count,
                        bytes: c.bytes,
                        error: c.error,
                    },
                );
            }
        }
        let mut out = Vec::with_capacity(buf.entries.len() + self.reducers.len());
        for (key, value) in &buf.entries {
            let dest = self.reducers[partition_key(&key.encode(), self.reducers.len())];
            self.seq += 1;
            out.push((
                dest,
                ShuffleMessage::Record(IntermediateRecord {
                    job: self.job.clone(),
                    window: w,
                    key: *key,
                    value: *value,
                    mapper: self.node,
                    seq: self.seq,
                }),
            ));
        }
        for &r in &self.reducers {
            out.push((
                r,
                ShuffleMessage::Close(WindowClose {
                    job: self.job.clone(),
                    window: w,
                    mapper: self.node,
                }),
            ));
        }
        if self.retention > 0 {
            self.cache.push_back(CachedWindow {
                window: w,
                entries: buf
                    .entries
                    .into_iter()
                    .map(|(key, value)| ResultEntry { key, value })
                    .collect(),
            });
            while self.cache.len() > self.retention {
                self.cache.pop_front();
            }
        }
        out
    }

    /// Windows that have ended by `now` and are still unflushed, in order.
    pub fn due(&self, now: SimTime) -> Vec<WindowId> {
        let mut w = self.next_flush;
        let mut out = Vec::new();
        while self.window.end(w) <= now {
            out.push(w);
            w = WindowId(w.0 + 1);
        }
        out
    }

    pub fn first_window(&self) -> WindowId {
        self.first_window
    }

    pub fn cached(&self, w: WindowId) -> Option<&CachedWindow> {
        self.cache.iter().find(|c| c.window == w)
    }
}
