use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{by_window, AppError, JobOptions};
use crate::model::{FlowKey, NodeId, WindowId, WindowPolicy};
use crate::mr::{
    JobSpec, MapOperatorSpec, PlannedProbe, RecordKey, ReduceOperatorSpec, Value, WindowedResult,
};
use crate::netsim::{Port, Role, Topology};
use crate::probes::{AttachPoint, Field, Location, Predicate, ProbeKind, ProbeSpec};

/// Inclusive source-address range assigned to one mapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSlice {
    pub mapper: NodeId,
    pub src_lo: u32,
    pub src_hi: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElephantParams {
    pub n: usize,
    pub k_counters: usize,
    pub window: WindowPolicy,
    /// Mappers for the plain mode; defaults to the edge nodes.
    #[serde(default)]
    pub mappers: Option<Vec<NodeId>>,
    /// Flow-space split: each mapper only tracks its slice, observing every
    /// packet that crosses it. Meant for mappers that see all flows.
    #[serde(default)]
    pub partition: Option<Vec<FlowSlice>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopFlow {
    pub flow: FlowKey,
    pub packets: u64,
    pub bytes: u64,
}

/// Sorted by packets descending, ties by flow key ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopNReport {
    pub flows: Vec<TopFlow>,
}

/// Checks that the slices are non-overlapping and together cover every
/// 32-bit source address.
pub fn validate_partition(slices: &[FlowSlice]) -> Result<(), AppError> {
    if slices.is_empty() {
        return Err(AppError::InvalidPartition("no slices".into()));
    }
    let mut sorted = slices.to_vec();
    sorted.sort_by_key(|s| (s.src_lo, s.src_hi));
    let mut next: u64 = 0;
    for s in &sorted {
        if s.src_lo > s.src_hi {
            return Err(AppError::InvalidPartition(format!(
                "slice {}..={} is empty",
                s.src_lo, s.src_hi
            )));
        }
        match u64::from(s.src_lo).cmp(&next) {
            std::cmp::Ordering::Less => {
                return Err(AppError::InvalidPartition(format!(
                    "slice starting at {} overlaps its predecessor",
                    s.src_lo
                )))
            }
            std::cmp::Ordering::Greater => {
                return Err(AppError::InvalidPartition(format!(
                    "addresses {next}..{} are not covered",
                    s.src_lo
                )))
            }
            std::cmp::Ordering::Equal => {}
        }
        next = u64::from(s.src_hi) + 1;
    }
    if next != 1 << 32 {
        return Err(AppError::InvalidPartition(format!(
            "addresses from {next} are not covered"
        )));
    }
    Ok(())
}

pub fn build_elephant_job(
    topo: &Topology,
    params: &ElephantParams,
    opts: &JobOptions,
) -> Result<JobSpec, AppError> {
    if params.n == 0 {
        return Err(AppError::InvalidParams("n must be positive".into()));
    }
    if params.k_counters < params.n {
        return Err(AppError::InvalidParams(format!(
            "k_counters {} is below n {}",
            params.k_counters, params.n
        )));
    }
    let sampler = ProbeSpec::new(ProbeKind::Sampler { n: 1 });
    let (mappers, probe_plan) = match &params.partition {
        Some(slices) => {
            validate_partition(slices)?;
            let mappers: Vec<NodeId> = slices
                .iter()
                .map(|s| s.mapper)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let plan = slices
                .iter()
                .map(|s| PlannedProbe {
                    attach: AttachPoint::new(s.mapper, Location::FlowTable),
                    spec: sampler.clone().with_predicate(Predicate::Range {
                        field: Field::SrcAddr,
                        lo: s.src_lo.into(),
                        hi: s.src_hi.into(),
                    }),
                })
                .collect();
            (mappers, plan)
        }
        None => {
            let mappers = params
                .mappers
                .clone()
                .unwrap_or_else(|| topo.nodes_with_role(Role::Edge));
            let plan = mappers
                .iter()
                .map(|&n| PlannedProbe {
                    attach: AttachPoint::new(n, Location::IngressPort(Port::Access)),
                    spec: sampler.clone(),
                })
                .collect();
            (mappers, plan)
        }
    };
    if mappers.is_empty() {
        return Err(AppError::InsufficientNodes {
            what: "mappers",
            needed: 1,
            available: 0,
        });
    }
    let reducers = opts.pick_reducers(topo, &mappers)?;
    Ok(JobSpec {
        job_id: opts.job_id.clone(),
        mapper_nodes: mappers,
        reducer_nodes: reducers,
        probe_plan,
        map_operator: MapOperatorSpec::SpaceSaving {
            k_counters: params.k_counters,
        },
        reduce_operator: ReduceOperatorSpec::TopnRank { n: params.n },
        window: params.window,
        retention_windows: opts.retention_windows,
        allow_role_overlap: false,
    })
}

/// Global top-`n` per window from every reducer's local ranking.
pub fn decode_topn(results: &[WindowedResult], n: usize) -> BTreeMap<WindowId, TopNReport> {
    by_window(results)
        .into_iter()
        .map(|(w, rs)| {
            let mut merged: BTreeMap<FlowKey, (u64, u64)> = BTreeMap::new();
            for e in rs.iter().flat_map(|r| &r.entries) {
                if let (RecordKey::Flow(f), Value::Estimate { packets, bytes, .. }) = (e.key, e.value)
                {
                    let slot = merged.entry(f).or_default();
                    slot.0 += packets;
                    slot.1 += bytes;
                }
            }
            let mut flows: Vec<TopFlow> = merged
                .into_iter()
                .map(|(flow, (packets, bytes))| TopFlow {
                    flow,
                    packets,
                    bytes,
                })
                .collect();
            flows.sort_by_key(|f| (Reverse(f.packets), f.flow));
            flows.truncate(n);
            (w, TopNReport { flows })
        })
        .collect()
}
