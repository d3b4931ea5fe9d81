use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{by_window, AppError, JobOptions, INGRESS_TAG, INGRESS_TS_TAG};
use crate::model::{NodeId, SimTime, WindowId, WindowPolicy};
use crate::mr::{
    JobSpec, MapOperatorSpec, PlannedProbe, RecordKey, ReduceOperatorSpec, Value, WindowedResult,
};
use crate::netsim::{Port, Role, Topology};
use crate::probes::{AttachPoint, GroupBy, Location, ProbeKind, ProbeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrafficMatrixCell {
    pub src: NodeId,
    pub dst: NodeId,
    pub packets: u64,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_latency: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency: Option<SimTime>,
}

/// Edge routers label packets on entry (and timestamp them when latency is
/// wanted) and count egress packets grouped by that label.
pub fn build_traffic_matrix_job(
    topo: &Topology,
    window: WindowPolicy,
    with_latency: bool,
    opts: &JobOptions,
) -> Result<JobSpec, AppError> {
    let mappers = topo.nodes_with_role(Role::Edge);
    if mappers.len() < 2 {
        return Err(AppError::InsufficientNodes {
            what: "edge nodes",
            needed: 2,
            available: mappers.len(),
        });
    }
    let reducers = opts.pick_reducers(topo, &mappers)?;
    let mut probe_plan = Vec::new();
    for &n in &mappers {
        let ingress = AttachPoint::new(n, Location::IngressPort(Port::Access));
        probe_plan.push(PlannedProbe {
            attach: ingress,
            spec: ProbeSpec::new(ProbeKind::Label {
                tag: INGRESS_TAG.into(),
            }),
        });
        if with_latency {
            probe_plan.push(PlannedProbe {
                attach: ingress,
                spec: ProbeSpec::new(ProbeKind::Timestamp {
                    tag: INGRESS_TS_TAG.into(),
                }),
            });
        }
        probe_plan.push(PlannedProbe {
            attach: AttachPoint::new(n, Location::EgressPort(Port::Access)),
            spec: ProbeSpec::new(ProbeKind::Counter {
                group_by: GroupBy::Meta(INGRESS_TAG.into()),
                latency_from: with_latency.then(|| INGRESS_TS_TAG.into()),
            }),
        });
    }
    Ok(JobSpec {
        job_id: opts.job_id.clone(),
        mapper_nodes: mappers,
        reducer_nodes: reducers,
        probe_plan,
        map_operator: MapOperatorSpec::TrafficMatrixCell {
            ingress_tag: INGRESS_TAG.into(),
        },
        reduce_operator: ReduceOperatorSpec::LatencyMinmax,
        window,
        retention_windows: opts.retention_windows,
        allow_role_overlap: false,
    })
}

/// Matrix cells per window, sorted by (src, dst).
pub fn decode_traffic_matrix(
    results: &[WindowedResult],
) -> BTreeMap<WindowId, Vec<TrafficMatrixCell>> {
    by_window(results)
        .into_iter()
        .map(|(w, rs)| {
            let mut cells: Vec<TrafficMatrixCell> = rs
                .iter()
                .flat_map(|r| &r.entries)
                .filter_map(|e| match (e.key, e.value) {
                    (RecordKey::Pair { src, dst }, Value::Cell(c)) => Some(TrafficMatrixCell {
                        src,
                        dst,
                        packets: c.packets,
                        bytes: c.bytes,
                        min_latency: c.min_latency,
                        max_latency: c.max_latency,
                    }),
                    _ => None,
                })
                .collect();
            cells.sort();
            (w, cells)
        })
        .collect()
}
