use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{by_window, AppError, JobOptions, INGRESS_TAG};
use crate::model::{FlowKey, LinkId, NodeId, WindowId, WindowPolicy};
use crate::mr::{JobSpec, MapOperatorSpec, PlannedProbe, RecordKey, ReduceOperatorSpec, WindowedResult};
use crate::netsim::{Port, Role, Topology};
use crate::probes::{AttachPoint, Location, ProbeKind, ProbeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Victim {
    pub flow: FlowKey,
    pub drops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotSpot {
    pub node: NodeId,
    pub port: LinkId,
    pub drops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossyPath {
    pub ingress: NodeId,
    pub egress: NodeId,
    pub drops: u64,
}

/// Each list is sorted by drops descending, ties by key ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub top_victims: Vec<Victim>,
    pub hot_spots: Vec<HotSpot>,
    pub lossy_paths: Vec<LossyPath>,
}

impl CongestionReport {
    pub fn is_empty(&self) -> bool {
        self.top_victims.is_empty() && self.hot_spots.is_empty() && self.lossy_paths.is_empty()
    }
}

/// Every forwarding node maps: it labels packets entering from its access
/// port and reports each tail drop on any of its queues.
pub fn build_congestion_job(
    topo: &Topology,
    window: WindowPolicy,
    top_k: Option<usize>,
    opts: &JobOptions,
) -> Result<JobSpec, AppError> {
    if top_k == Some(0) {
        return Err(AppError::InvalidParams("top_k must be positive".into()));
    }
    let mappers: Vec<NodeId> = topo
        .nodes()
        .filter(|&n| topo.role(n) != Some(Role::Observer))
        .collect();
    let reducers = opts.pick_reducers(topo, &mappers)?;
    let mut probe_plan = Vec::new();
    for &n in &mappers {
        probe_plan.push(PlannedProbe {
            attach: AttachPoint::new(n, Location::IngressPort(Port::Access)),
            spec: ProbeSpec::new(ProbeKind::Label {
                tag: INGRESS_TAG.into(),
            }),
        });
        for &(_, link) in topo.neighbors(n) {
            probe_plan.push(PlannedProbe {
                attach: AttachPoint::new(n, Location::Queue(link)),
                spec: ProbeSpec::new(ProbeKind::DropNotify),
            });
        }
    }
    Ok(JobSpec {
        job_id: opts.job_id.clone(),
        mapper_nodes: mappers,
        reducer_nodes: reducers,
        probe_plan,
        map_operator: MapOperatorSpec::DropStats {
            ingress_tag: INGRESS_TAG.into(),
        },
        reduce_operator: ReduceOperatorSpec::DropStats { top_k },
        window,
        retention_windows: opts.retention_windows,
        allow_role_overlap: false,
    })
}

fn ranked<K: Ord + Copy, T>(mut v: Vec<(K, u64)>, top_k: Option<usize>, f: impl Fn(K, u64) -> T) -> Vec<T> {
    v.sort_by_key(|&(k, d)| (Reverse(d), k));
    if let Some(k) = top_k {
        v.truncate(k);
    }
    v.into_iter().map(|(k, d)| f(k, d)).collect()
}

/// Merges every reducer's partial lists for a window and re-ranks them.
pub fn decode_congestion(
    results: &[WindowedResult],
    top_k: Option<usize>,
) -> BTreeMap<WindowId, CongestionReport> {
    by_window(results)
        .into_iter()
        .map(|(w, rs)| {
            let (mut flows, mut ports, mut paths) = (Vec::new(), Vec::new(), Vec::new());
            for e in rs.iter().flat_map(|r| &r.entries) {
                let d = e.value.count();
                match e.key {
                    RecordKey::Flow(f) => flows.push((f, d)),
                    RecordKey::Port { node, link } => ports.push(((node, link), d)),
                    RecordKey::Path { ingress, egress } => paths.push(((ingress, egress), d)),
                    RecordKey::Server(_) | RecordKey::Pair { .. } => {}
                }
            }
            let report = CongestionReport {
                top_victims: ranked(flows, top_k, |flow, drops| Victim { flow, drops }),
                hot_spots: ranked(ports, top_k, |(node, port), drops| HotSpot { node, port, drops }),
                lossy_paths: ranked(paths, top_k, |(ingress, egress), drops| LossyPath {
                    ingress,
                    egress,
                    drops,
                }),
            };
            (w, report)
        })
        .collect()
}
