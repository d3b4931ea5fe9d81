use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::mem::discriminant;

use thiserror::Error;

use super::job::ReduceOperatorSpec;
use super::mapper::CachedWindow;
use super::record::{JobId, RecordKey, ResultEntry, ShuffleMessage, Value, WindowedResult};
use crate::model::{NodeId, SimTime, WindowId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolViolation {
    #[error("record for window {window:?} from mapper {mapper} after finalization")]
    RecordAfterFinalize { window: WindowId, mapper: NodeId },
    #[error("record for window {window:?} from mapper {mapper} after its close")]
    RecordAfterClose { window: WindowId, mapper: NodeId },
    #[error("duplicate close for window {window:?} from mapper {mapper}")]
    DuplicateClose { window: WindowId, mapper: NodeId },
    #[error("message from {0}, which is not a mapper of this job")]
    UnknownMapper(NodeId),
    #[error("message for job {0} delivered to another job's reducer")]
    WrongJob(JobId),
    #[error("value kind mismatch for key {0:?}")]
    ValueMismatch(RecordKey),
}

#[derive(Debug, Default)]
struct OpenWindow {
    folds: BTreeMap<RecordKey, Value>,
    closed: BTreeSet<NodeId>,
}

/// Reduce half of a job on one reducer node.
#[derive(Debug)]
pub struct ReducerState {
    job: JobId,
    node: NodeId,
    mappers: BTreeSet<NodeId>,
    op: ReduceOperatorSpec,
    open: BTreeMap<WindowId, OpenWindow>,
    finalized: BTreeSet<WindowId>,
    retention: usize,
    cache: VecDeque<CachedWindow>,
}

impl ReducerState {
    pub fn new(
        job: JobId,
        node: NodeId,
        mappers: impl IntoIterator<Item = NodeId>,
        op: ReduceOperatorSpec,
        retention: usize,
    ) -> Self {
        ReducerState {
            job,
            node,
            mappers: mappers.into_iter().collect(),
            op,
            open: BTreeMap::new(),
            finalized: BTreeSet::new(),
            retention,
            cache: VecDeque::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Folds a record or registers a close. Returns the window's result once
    /// every mapper has closed it.
    pub fn ingest(
        &mut self,
        msg: &ShuffleMessage,
        now: SimTime,
    ) -> Result<Option<WindowedResult>, ProtocolViolation> {
        if msg.job() != &self.job {
            return Err(ProtocolViolation::WrongJob(msg.job().clone()));
        }
        match msg {
            ShuffleMessage::Record(r) => {
                if !self.mappers.contains(&r.mapper) {
                    return Err(ProtocolViolation::UnknownMapper(r.mapper));
                }
                if self.finalized.contains(&r.window) {
                    return Err(ProtocolViolation::RecordAfterFinalize {
                        window: r.window,
                        mapper: r.mapper,
                    });
                }
                let open = self.open.entry(r.window).or_default();
                if open.closed.contains(&r.mapper) {
                    return Err(ProtocolViolation::RecordAfterClose {
                        window: r.window,
                        mapper: r.mapper,
                    });
                }
                match open.folds.get_mut(&r.key) {
                    Some(v) => v
                        .merge(&r.value)
                        .map_err(|_| ProtocolViolation::ValueMismatch(r.key))?,
                    None => {
                        if r.value.kind() != self.op.input() {
                            return Err(ProtocolViolation::ValueMismatch(r.key));
                        }
                        open.folds.insert(r.key, r.value);
                    }
                }
                Ok(None)
            }
            ShuffleMessage::Close(c) => {
                if !self.mappers.contains(&c.mapper) {
                    return Err(ProtocolViolation::UnknownMapper(c.mapper));
                }
                let dup = ProtocolViolation::DuplicateClose {
                    window: c.window,
                    mapper: c.mapper,
                };
                if self.finalized.contains(&c.window) {
                    return Err(dup);
                }
                let open = self.open.entry(c.window).or_default();
                if !open.closed.insert(c.mapper) {
                    return Err(dup);
                }
                if open.closed.len() < self.mappers.len() {
                    return Ok(None);
                }
                let open = self.open.remove(&c.window).expect("window is open");
                self.finalized.insert(c.window);
                let entries = finish(&self.op, open.folds);
                if self.retention > 0 {
                    self.cache.push_back(CachedWindow {
                        window: c.window,
                        entries: entries.clone(),
                    });
                    while self.cache.len() > self.retention {
                        self.cache.pop_front();
                    }
                }
                Ok(Some(WindowedResult {
                    job: self.job.clone(),
                    window: c.window,
                    reducer: self.node,
                    entries,
                    finalized_at: now,
                }))
            }
        }
    }

    pub fn cached(&self, w: WindowId) -> Option<&CachedWindow> {
        self.cache.iter().find(|c| c.window == w)
    }
}

/// Descending by count, then ascending by key.
fn rank(entries: &mut [ResultEntry]) {
    entries.sort_by_key(|e| (Reverse(e.value.count()), e.key));
}

fn finish(op: &ReduceOperatorSpec, folds: BTreeMap<RecordKey, Value>) -> Vec<ResultEntry> {
    let mut entries: Vec<ResultEntry> = folds
        .into_iter()
        .map(|(key, value)| ResultEntry { key, value })
        .collect();
    match op {
        ReduceOperatorSpec::Sum { threshold } => {
            if let Some(th) = threshold {
                entries.retain(|e| e.value.count() > *th);
            }
        }
        ReduceOperatorSpec::LatencyMinmax => {}
        ReduceOperatorSpec::DropStats { top_k } => {
            if let Some(k) = top_k {
                let mut by_kind: Vec<Vec<ResultEntry>> = Vec::new();
                for e in entries {
                    match by_kind
                        .iter_mut()
                        .find(|g| discriminant(&g[0].key) == discriminant(&e.key))
                    {
                        Some(g) => g.push(e),
                        None => by_kind.push(vec![e]),
                    }
                }
                entries = Vec::new();
                for mut g in by_kind {
                    rank(&mut g);
                    g.truncate(*k);
                    entries.extend(g);
                }
                entries.sort_by_key(|e| e.key);
            }
        }
        ReduceOperatorSpec::TopnRank { n } => {
            rank(&mut entries);
            entries.truncate(*n);
            entries.sort_by_key(|e| e.key);
        }
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlowKey, LinkId};
    use crate::mr::record::{IntermediateRecord, WindowClose};

    fn rec(mapper: u32, w: u64, key: RecordKey, v: u64) -> ShuffleMessage {
        ShuffleMessage::Record(IntermediateRecord {
            job: JobId::new("j"),
            window: WindowId(w),
            key,
            value: Value::Count(v),
            mapper: NodeId(mapper),
            seq: 0,
        })
    }

    fn close(mapper: u32, w: u64) -> ShuffleMessage {
        ShuffleMessage::Close(WindowClose {
            job: JobId::new("j"),
            window: WindowId(w),
            mapper: NodeId(mapper),
        })
    }

    fn reducer(op: ReduceOperatorSpec, mappers: &[u32]) -> ReducerState {
        ReducerState::new(
            JobId::new("j"),
            NodeId(10),
            mappers.iter().map(|&m| NodeId(m)),
            op,
            0,
        )
    }

    #[test]
    fn sums_values_per_key() {
        let mut r = reducer(ReduceOperatorSpec::Sum { threshold: None }, &[1, 2]);
        let s = RecordKey::Server(42);
        assert_eq!(r.ingest(&rec(1, 0, s, 5), SimTime(0)), Ok(None));
        assert_eq!(r.ingest(&rec(2, 0, s, 7), SimTime(0)), Ok(None));
        assert_eq!(r.ingest(&close(1, 0), SimTime(0)), Ok(None));
        let res = r.ingest(&close(2, 0), SimTime(3)).unwrap().unwrap();
        assert_eq!(
            res.entries,
            vec![ResultEntry {
                key: s,
                value: Value::Count(12)
            }]
        );
        assert_eq!(res.finalized_at, SimTime(3));
    }

    #[test]
    fn barrier_waits_for_every_mapper() {
        let mut r = reducer(ReduceOperatorSpec::Sum { threshold: None }, &[1, 2, 3]);
        assert_eq!(r.ingest(&close(1, 0), SimTime(0)), Ok(None));
        assert_eq!(r.ingest(&close(3, 0), SimTime(0)), Ok(None));
    }

    #[test]
    fn protocol_violations() {
        let mut r = reducer(ReduceOperatorSpec::Sum { threshold: None }, &[1]);
        let s = RecordKey::Server(1);
        assert!(r.ingest(&close(1, 0), SimTime(0)).unwrap().is_some());
        assert!(matches!(
            r.ingest(&rec(1, 0, s, 1), SimTime(0)),
            Err(ProtocolViolation::RecordAfterFinalize { .. })
        ));
        assert!(matches!(
            r.ingest(&close(1, 0), SimTime(0)),
            Err(ProtocolViolation::DuplicateClose { .. })
        ));
        assert!(matches!(
            r.ingest(&close(7, 1), SimTime(0)),
            Err(ProtocolViolation::UnknownMapper(NodeId(7)))
        ));

        let mut r = reducer(ReduceOperatorSpec::Sum { threshold: None }, &[1, 2]);
        r.ingest(&close(1, 0), SimTime(0)).unwrap();
        assert!(matches!(
            r.ingest(&close(1, 0), SimTime(0)),
            Err(ProtocolViolation::DuplicateClose { .. })
        ));
        assert!(matches!(
            r.ingest(&rec(1, 0, s, 1), SimTime(0)),
            Err(ProtocolViolation::RecordAfterClose { .. })
        ));
    }

    #[test]
    fn threshold_is_strict() {
        let mut r = reducer(ReduceOperatorSpec::Sum { threshold: Some(100) }, &[1]);
        r.ingest(&rec(1, 0, RecordKey::Server(1), 100), SimTime(0)).unwrap();
        r.ingest(&rec(1, 0, RecordKey::Server(2), 101), SimTime(0)).unwrap();
        let res = r.ingest(&close(1, 0), SimTime(0)).unwrap().unwrap();
        assert_eq!(res.entries.len(), 1);
        assert_eq!(res.entries[0].key, RecordKey::Server(2));
    }

    #[test]
    fn drop_stats_keeps_top_k_per_kind() {
        let mut r = reducer(ReduceOperatorSpec::DropStats { top_k: Some(1) }, &[1]);
        let f = |a| RecordKey::Flow(FlowKey::new(a, 0, 0, 0, 0));
        let p = |l| RecordKey::Port {
            node: NodeId(1),
            link: LinkId(l),
        };
        for (k, v) in [(f(1), 3), (f(2), 5), (p(1), 4), (p(2), 4)] {
            r.ingest(&rec(1, 0, k, v), SimTime(0)).unwrap();
        }
        let res = r.ingest(&close(1, 0), SimTime(0)).unwrap().unwrap();
        let keys: Vec<_> = res.entries.iter().map(|e| e.key).collect();
        assert_eq!(keys, vec![f(2), p(1)]);
    }
}
