use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{JobId, ValueKind};
use crate::model::{NodeId, WindowPolicy};
use crate::netsim::Topology;
use crate::probes::{AttachPoint, ProbeError, ProbeKind, ProbeSpec};

/// Local-processor transformation from probe emissions to keyed values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MapOperatorSpec {
    /// `FilterMatch` → `(Server(dst), 1)` on the first sighting of a flow in
    /// a window.
    UniqueFlowCount,
    /// Counter snapshots grouped by the ingress label → `(Pair(src, self), cell)`.
    TrafficMatrixCell { ingress_tag: String },
    /// `DropNotice` → one count each under `Flow`, `Port` and `Path` keys.
    DropStats { ingress_tag: String },
    /// Sampled packets feed a per-window Space-Saving summary; tracked flows
    /// are flushed as `(Flow, Estimate)`.
    SpaceSaving { k_counters: usize },
}

impl MapOperatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MapOperatorSpec::UniqueFlowCount => "unique_flow_count",
            MapOperatorSpec::TrafficMatrixCell { .. } => "traffic_matrix_cell",
            MapOperatorSpec::DropStats { .. } => "drop_stats",
            MapOperatorSpec::SpaceSaving { .. } => "space_saving",
        }
    }

    pub fn output(&self) -> ValueKind {
        match self {
            MapOperatorSpec::UniqueFlowCount | MapOperatorSpec::DropStats { .. } => ValueKind::Count,
            MapOperatorSpec::TrafficMatrixCell { .. } => ValueKind::Cell,
            MapOperatorSpec::SpaceSaving { .. } => ValueKind::Estimate,
        }
    }

    fn map_tags(&mut self, f: &impl Fn(&str) -> String) {
        match self {
            MapOperatorSpec::TrafficMatrixCell { ingress_tag }
            | MapOperatorSpec::DropStats { ingress_tag } => *ingress_tag = f(ingress_tag),
            MapOperatorSpec::UniqueFlowCount | MapOperatorSpec::SpaceSaving { .. } => {}
        }
    }
}

/// Per-key fold plus finisher run at window finalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ReduceOperatorSpec {
    /// Sums counts; with a threshold, keeps only keys whose sum is strictly
    /// greater.
    Sum {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<u64>,
    },
    LatencyMinmax,
    /// Sums drop counts and keeps the `top_k` heaviest keys of each key kind.
    DropStats {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top_k: Option<usize>,
    },
    /// Sums estimates and keeps the `n` flows with most packets.
    TopnRank { n: usize },
}

impl ReduceOperatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ReduceOperatorSpec::Sum { .. } => "sum",
            ReduceOperatorSpec::LatencyMinmax => "latency_minmax",
            ReduceOperatorSpec::DropStats { .. } => "drop_stats",
            ReduceOperatorSpec::TopnRank { .. } => "topn_rank",
        }
    }

    pub fn input(&self) -> ValueKind {
        match self {
            ReduceOperatorSpec::Sum { .. } | ReduceOperatorSpec::DropStats { .. } => ValueKind::Count,
            ReduceOperatorSpec::LatencyMinmax => ValueKind::Cell,
            ReduceOperatorSpec::TopnRank { .. } => ValueKind::Estimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedProbe {
    pub attach: AttachPoint,
    pub spec: ProbeSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: JobId,
    pub mapper_nodes: Vec<NodeId>,
    pub reducer_nodes: Vec<NodeId>,
    pub probe_plan: Vec<PlannedProbe>,
    pub map_operator: MapOperatorSpec,
    pub reduce_operator: ReduceOperatorSpec,
    pub window: WindowPolicy,
    #[serde(default)]
    pub retention_windows: usize,
    /// Lets a node be both mapper and reducer. Off by default.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_role_overlap: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JobError {
    #[error("node {0} is both mapper and reducer")]
    OverlappingRoles(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown or inactive job {0}")]
    UnknownJob(JobId),
    #[error("job {0} already submitted")]
    DuplicateJob(JobId),
    #[error("job needs at least one mapper")]
    NoMappers,
    #[error("job needs at least one reducer")]
    NoReducers,
    #[error("node {0} listed twice")]
    DuplicateNode(NodeId),
    #[error("probe planned on {0}, which is not a mapper")]
    ProbeOnNonMapper(NodeId),
    #[error("map operator {map} does not feed reduce operator {reduce}")]
    IncompatibleOperators {
        map: &'static str,
        reduce: &'static str,
    },
    #[error("invalid operator parameter: {0}")]
    InvalidOperator(String),
    #[error("counter probes need a window length that is a multiple of the slide")]
    MisalignedCounterWindow,
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Prefix applied to every metadata tag of a job so that concurrent jobs
/// never read each other's labels.
pub fn scoped_tag(job: &JobId, tag: &str) -> String {
    format!("{job}/{tag}")
}

impl JobSpec {
    pub fn validate(&self, topo: &Topology) -> Result<(), JobError> {
        if self.mapper_nodes.is_empty() {
            return Err(JobError::NoMappers);
        }
        if self.reducer_nodes.is_empty() {
            return Err(JobError::NoReducers);
        }
        let mut mappers = BTreeSet::new();
        for &n in &self.mapper_nodes {
            if !topo.contains(n) {
                return Err(JobError::UnknownNode(n));
            }
            if !mappers.insert(n) {
                return Err(JobError::DuplicateNode(n));
            }
        }
        let mut reducers = BTreeSet::new();
        for &n in &self.reducer_nodes {
            if !topo.contains(n) {
                return Err(JobError::UnknownNode(n));
            }
            if !reducers.insert(n) {
                return Err(JobError::DuplicateNode(n));
            }
        }
        if !self.allow_role_overlap {
            if let Some(&n) = mappers.intersection(&reducers).next() {
                return Err(JobError::OverlappingRoles(n));
            }
        }
        for p in &self.probe_plan {
            if !topo.contains(p.attach.node) {
                return Err(JobError::UnknownNode(p.attach.node));
            }
            if !mappers.contains(&p.attach.node) {
                return Err(JobError::ProbeOnNonMapper(p.attach.node));
            }
            if matches!(p.spec.kind, ProbeKind::Counter { .. })
                && !self.window.length().micros().is_multiple_of(self.window.slide().micros())
            {
                return Err(JobError::MisalignedCounterWindow);
            }
        }
        if self.map_operator.output() != self.reduce_operator.input() {
            return Err(JobError::IncompatibleOperators {
                map: self.map_operator.name(),
                reduce: self.reduce_operator.name(),
            });
        }
        match (&self.map_operator, &self.reduce_operator) {
            (MapOperatorSpec::SpaceSaving { k_counters: 0 }, _) => {
                return Err(JobError::InvalidOperator("k_counters must be positive".into()))
            }
            (_, ReduceOperatorSpec::TopnRank { n: 0 }) => {
                return Err(JobError::InvalidOperator("n must be positive".into()))
            }
            (_, ReduceOperatorSpec::DropStats { top_k: Some(0) }) => {
                return Err(JobError::InvalidOperator("top_k must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Copy of the spec with every metadata tag moved into the job's namespace.
    pub fn scoped(&self) -> JobSpec {
        let mut out = self.clone();
        let job = self.job_id.clone();
        let f = move |t: &str| scoped_tag(&job, t);
        for p in &mut out.probe_plan {
            p.spec.map_tags(&f);
        }
        out.map_operator.map_tags(&f);
        out
    }
}
