use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{by_window, AppError, JobOptions};
use crate::model::{WindowId, WindowPolicy};
use crate::mr::{JobSpec, MapOperatorSpec, PlannedProbe, RecordKey, ReduceOperatorSpec, WindowedResult};
use crate::netsim::{Port, Role, Topology};
use crate::probes::{AttachPoint, Field, Location, Predicate, ProbeKind, ProbeSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdosParams {
    pub server_pool: BTreeSet<u32>,
    /// Alarm when a server sees strictly more unique flows than this.
    pub threshold: u64,
    pub window: WindowPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DdosAlarm {
    pub server: u32,
    pub flows: u64,
}

/// Edge routers filter packets towards the pool; each mapper counts unique
/// flows per server and window, reducers sum and keep servers above the
/// threshold.
pub fn build_ddos_job(
    params: &DdosParams,
    topo: &Topology,
    opts: &JobOptions,
) -> Result<JobSpec, AppError> {
    if params.threshold == 0 {
        return Err(AppError::InvalidParams("threshold must be at least 1".into()));
    }
    if params.server_pool.is_empty() {
        return Err(AppError::InvalidParams("server pool is empty".into()));
    }
    let mappers = topo.nodes_with_role(Role::Edge);
    if mappers.is_empty() {
        return Err(AppError::InsufficientNodes {
            what: "edge nodes",
            needed: 1,
            available: 0,
        });
    }
    let reducers = opts.pick_reducers(topo, &mappers)?;
    let filter = ProbeSpec::new(ProbeKind::Filter).with_predicate(Predicate::In {
        field: Field::DstAddr,
        values: params.server_pool.iter().map(|&a| a.into()).collect(),
    });
    let probe_plan = mappers
        .iter()
        .map(|&n| PlannedProbe {
            attach: AttachPoint::new(n, Location::IngressPort(Port::Access)),
            spec: filter.clone(),
        })
        .collect();
    Ok(JobSpec {
        job_id: opts.job_id.clone(),
        mapper_nodes: mappers,
        reducer_nodes: reducers,
        probe_plan,
        map_operator: MapOperatorSpec::UniqueFlowCount,
        reduce_operator: ReduceOperatorSpec::Sum {
            threshold: Some(params.threshold),
        },
        window: params.window,
        retention_windows: opts.retention_windows,
        allow_role_overlap: false,
    })
}

/// Alarms per window, sorted by server address.
pub fn decode_ddos(results: &[WindowedResult]) -> BTreeMap<WindowId, Vec<DdosAlarm>> {
    by_window(results)
        .into_iter()
        .map(|(w, rs)| {
            let mut alarms: Vec<DdosAlarm> = rs
                .iter()
                .flat_map(|r| &r.entries)
                .filter_map(|e| match e.key {
                    RecordKey::Server(server) => Some(DdosAlarm {
                        server,
                        flows: e.value.count(),
                    }),
                    _ => None,
                })
                .collect();
            alarms.sort();
            (w, alarms)
        })
        .collect()
}
