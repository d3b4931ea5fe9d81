//! The four analytics applications as job builders plus result decoders.

mod congestion;
mod ddos;
mod elephant;
mod traffic_matrix;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use congestion::{build_congestion_job, decode_congestion, CongestionReport, HotSpot, LossyPath, Victim};
pub use ddos::{build_ddos_job, decode_ddos, DdosAlarm, DdosParams};
pub use elephant::{
    build_elephant_job, decode_topn, validate_partition, ElephantParams, FlowSlice, TopFlow,
    TopNReport,
};
pub use traffic_matrix::{build_traffic_matrix_job, decode_traffic_matrix, TrafficMatrixCell};

use crate::model::{NodeId, WindowId};
use crate::mr::{JobId, WindowedResult};
use crate::netsim::{Role, Topology};

/// Metadata tag carrying the ingress router id.
pub const INGRESS_TAG: &str = "ingress";
/// Metadata tag carrying the ingress timestamp.
pub const INGRESS_TS_TAG: &str = "ingress_ts";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppError {
    #[error("not enough {what}: need {needed}, have {available}")]
    InsufficientNodes {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Deployment knobs shared by every builder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOptions {
    pub job_id: JobId,
    /// Explicit reducer nodes; when absent, `reducer_count` nodes are picked
    /// among non-mappers, observers first, then by ascending id.
    #[serde(default)]
    pub reducers: Option<Vec<NodeId>>,
    #[serde(default = "one")]
    pub reducer_count: usize,
    #[serde(default)]
    pub retention_windows: usize,
}

fn one() -> usize {
    1
}

impl JobOptions {
    pub fn new(job_id: impl Into<String>) -> Self {
        JobOptions {
            job_id: JobId::new(job_id),
            reducers: None,
            reducer_count: 1,
            retention_windows: 0,
        }
    }

    pub fn with_reducer_count(mut self, n: usize) -> Self {
        self.reducer_count = n;
        self
    }

    pub fn with_reducers(mut self, nodes: Vec<NodeId>) -> Self {
        self.reducers = Some(nodes);
        self
    }

    fn pick_reducers(&self, topo: &Topology, mappers: &[NodeId]) -> Result<Vec<NodeId>, AppError> {
        if let Some(r) = &self.reducers {
            if r.is_empty() {
                return Err(AppError::InsufficientNodes {
                    what: "reducers",
                    needed: 1,
                    available: 0,
                });
            }
            return Ok(r.clone());
        }
        let taken: BTreeSet<NodeId> = mappers.iter().copied().collect();
        let mut free: Vec<NodeId> = topo.nodes().filter(|n| !taken.contains(n)).collect();
        free.sort_by_key(|&n| (topo.role(n) != Some(Role::Observer), n));
        let needed = self.reducer_count.max(1);
        if free.len() < needed {
            return Err(AppError::InsufficientNodes {
                what: "non-mapper nodes for reducers",
                needed,
                available: free.len(),
            });
        }
        free.truncate(needed);
        Ok(free)
    }
}

fn by_window(results: &[WindowedResult]) -> BTreeMap<WindowId, Vec<&WindowedResult>> {
    let mut out: BTreeMap<WindowId, Vec<&WindowedResult>> = BTreeMap::new();
    for r in results {
        out.entry(r.window).or_default().push(r);
    }
    out
}
