mod common;

use std::collections::BTreeSet;

use common::{dumbbell, quiet_tail_traffic};
use netmr::apps::{build_traffic_matrix_job, JobOptions};
use netmr::mr::{
    JobError, JobId, JobSpec, MapOperatorSpec, PlannedProbe, RecordKey, ReduceOperatorSpec,
    Runtime, RuntimeConfig,
};
use netmr::netsim::{Port, TrafficSpec};
use netmr::probes::{AttachPoint, Location, ProbeKind, ProbeSpec};
use netmr::{partition_key, NodeId, SimTime, WindowId, WindowPolicy};
use proptest::prelude::*;

const W: u64 = 100_000;

fn jump() -> WindowPolicy {
    WindowPolicy::jump(SimTime(W)).unwrap()
}

fn flow_count_job(id: &str, mappers: &[u32], reducers: &[u32]) -> JobSpec {
    JobSpec {
        job_id: JobId::new(id),
        mapper_nodes: mappers.iter().map(|&n| NodeId(n)).collect(),
        reducer_nodes: reducers.iter().map(|&n| NodeId(n)).collect(),
        probe_plan: mappers
            .iter()
            .map(|&n| PlannedProbe {
                attach: AttachPoint::new(NodeId(n), Location::IngressPort(Port::Access)),
                spec: ProbeSpec::new(ProbeKind::Filter),
            })
            .collect(),
        map_operator: MapOperatorSpec::UniqueFlowCount,
        reduce_operator: ReduceOperatorSpec::Sum { threshold: None },
        window: jump(),
        retention_windows: 0,
        allow_role_overlap: false,
    }
}

fn runtime(traffic: &TrafficSpec, delay: u64) -> Runtime {
    Runtime::new(
        dumbbell(1_000_000_000, 1_000_000),
        traffic,
        RuntimeConfig {
            transport_delay: SimTime(delay),
            ..Default::default()
        },
    )
    .unwrap()
}

fn traffic() -> TrafficSpec {
    quiet_tail_traffic(1, 20, W, 5)
}

#[test]
fn deployment_places_probes_on_mappers() {
    let mut rt = runtime(&traffic(), 0);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    let d = rt.deployment(&id).unwrap();
    assert_eq!(d.mappers, vec![NodeId(3), NodeId(4), NodeId(5)]);
    assert_eq!(d.reducers, vec![NodeId(9)]);
    assert_eq!(d.first_window, WindowId(0));
    let nodes: Vec<NodeId> = d.probes.iter().map(|&(n, _)| n).collect();
    assert_eq!(nodes, d.mappers);
    assert_eq!(rt.fabric().probes().len(), 3);
}

#[test]
fn submission_errors() {
    let mut rt = runtime(&traffic(), 0);
    assert_eq!(
        rt.submit_job(&flow_count_job("a", &[3, 4], &[4])),
        Err(JobError::OverlappingRoles(NodeId(4)))
    );
    assert_eq!(
        rt.submit_job(&flow_count_job("a", &[3, 42], &[9])),
        Err(JobError::UnknownNode(NodeId(42)))
    );
    assert_eq!(rt.submit_job(&flow_count_job("a", &[], &[9])), Err(JobError::NoMappers));
    assert_eq!(rt.submit_job(&flow_count_job("a", &[3], &[])), Err(JobError::NoReducers));
    let mut wrong = flow_count_job("a", &[3], &[9]);
    wrong.reduce_operator = ReduceOperatorSpec::LatencyMinmax;
    assert!(matches!(rt.submit_job(&wrong), Err(JobError::IncompatibleOperators { .. })));
    let mut stray = flow_count_job("a", &[3], &[9]);
    stray.probe_plan[0].attach.node = NodeId(5);
    assert_eq!(rt.submit_job(&stray), Err(JobError::ProbeOnNonMapper(NodeId(5))));

    // a failed submission leaves nothing installed
    assert!(rt.fabric().probes().is_empty());
    rt.submit_job(&flow_count_job("a", &[3], &[9])).unwrap();
    assert_eq!(
        rt.submit_job(&flow_count_job("a", &[4], &[9])),
        Err(JobError::DuplicateJob(JobId::new("a")))
    );
    let mut overlap = flow_count_job("b", &[3, 4], &[4]);
    overlap.allow_role_overlap = true;
    assert!(rt.submit_job(&overlap).is_ok());
}

#[test]
fn counter_windows_must_align_with_slide() {
    let topo = dumbbell(1_000_000_000, 1_000_000);
    let mut rt = runtime(&traffic(), 0);
    let sliding = WindowPolicy::sliding(SimTime(150_000), SimTime(W)).unwrap();
    let job = build_traffic_matrix_job(&topo, sliding, false, &JobOptions::new("tm")).unwrap();
    assert_eq!(rt.submit_job(&job), Err(JobError::MisalignedCounterWindow));
    let aligned = WindowPolicy::sliding(SimTime(2 * W), SimTime(W)).unwrap();
    let job = build_traffic_matrix_job(&topo, aligned, false, &JobOptions::new("tm")).unwrap();
    assert!(rt.submit_job(&job).is_ok());
}

#[test]
fn every_window_finalizes_even_without_traffic() {
    let empty = TrafficSpec::default();
    let mut rt = runtime(&empty, 0);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9, 1])).unwrap();
    rt.run_until(SimTime(5 * W));
    let results = rt.collect_results(&id);
    assert_eq!(results.len(), 10);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.window, WindowId(i as u64 / 2));
        assert!(r.entries.is_empty());
        assert_eq!(r.finalized_at, jump().end(r.window));
    }
}

#[test]
fn transport_delay_postpones_finalization() {
    let mut rt = runtime(&traffic(), 750);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    rt.run_until(SimTime(5 * W));
    let done: Vec<WindowId> = rt.collect_results(&id).iter().map(|r| r.window).collect();
    assert_eq!(done, (0..4).map(WindowId).collect::<Vec<_>>());
    rt.run_until(SimTime(5 * W + 750));
    let last = rt.collect_results(&id).pop().unwrap();
    assert_eq!(last.window, WindowId(4));
    assert_eq!(last.finalized_at, SimTime(5 * W + 750));
}

#[test]
fn subscribers_see_windows_in_order() {
    let mut rt = runtime(&traffic(), 300);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    let rx = rt.subscribe(&id).unwrap();
    rt.run_until(SimTime(3 * W));
    let first: Vec<WindowId> = rx.try_iter().map(|r| r.window).collect();
    rt.run_until(SimTime(6 * W + 300));
    let rest: Vec<WindowId> = rx.try_iter().map(|r| r.window).collect();
    assert_eq!(first, vec![WindowId(0), WindowId(1)]);
    assert_eq!(rest, vec![WindowId(2), WindowId(3), WindowId(4), WindowId(5)]);
    assert!(rt.subscribe(&JobId::new("nope")).is_none());
}

#[test]
fn cancel_stops_results_and_removes_probes() {
    let mut rt = runtime(&traffic(), 0);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    rt.run_until(SimTime(150_000));
    rt.cancel_job(&id, SimTime(250_000)).unwrap();
    assert_eq!(rt.cancel_job(&id, SimTime(300_000)), Err(JobError::UnknownJob(id.clone())));
    assert!(rt.is_active(&id));
    rt.run_until(SimTime(500_000));
    assert!(!rt.is_active(&id));
    assert!(rt.fabric().probes().is_empty());
    let windows: Vec<WindowId> = rt.collect_results(&id).iter().map(|r| r.window).collect();
    assert_eq!(windows, vec![WindowId(0), WindowId(1)]);
    assert_eq!(rt.cancel_job(&id, SimTime(600_000)), Err(JobError::UnknownJob(id.clone())));
    assert_eq!(
        rt.cancel_job(&JobId::new("never"), SimTime(0)),
        Err(JobError::UnknownJob(JobId::new("never")))
    );
}

#[test]
fn cancelled_id_cannot_be_reused_but_others_continue() {
    let mut rt = runtime(&traffic(), 0);
    let a = rt.submit_job(&flow_count_job("a", &[3, 4, 5], &[9])).unwrap();
    let b = rt.submit_job(&flow_count_job("b", &[3, 4, 5], &[1])).unwrap();
    // commands run before the tick at the same instant, so window 0 never flushes
    rt.cancel_job(&a, SimTime(100_000)).unwrap();
    rt.run_until(SimTime(5 * W));
    assert!(rt.collect_results(&a).is_empty());
    assert_eq!(rt.collect_results(&b).len(), 5);
    assert!(rt.submit_job(&flow_count_job("a", &[3], &[9])).is_err());
}

#[test]
fn cache_keeps_the_configured_depth() {
    let mut rt = runtime(&traffic(), 0);
    let mut job = flow_count_job("j", &[3, 4, 5], &[9]);
    job.retention_windows = 2;
    let id = rt.submit_job(&job).unwrap();
    rt.run_until(SimTime(5 * W));
    for node in [NodeId(3), NodeId(9)] {
        assert!(rt.query_cache(node, &id, WindowId(4)).is_some());
        assert!(rt.query_cache(node, &id, WindowId(3)).is_some());
        assert!(rt.query_cache(node, &id, WindowId(2)).is_none());
    }
    // the reducer's retained window is the merged result
    let merged = rt.query_cache(NodeId(9), &id, WindowId(4)).unwrap();
    let result = rt.collect_results(&id).pop().unwrap();
    assert_eq!(merged.entries, result.entries);
    assert!(rt.query_cache(NodeId(1), &id, WindowId(4)).is_none());

    let mut rt = runtime(&traffic(), 0);
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    rt.run_until(SimTime(5 * W));
    assert!(rt.query_cache(NodeId(3), &id, WindowId(4)).is_none());
}

#[test]
fn jobs_do_not_see_each_other() {
    let traffic = traffic();
    let mut alone = runtime(&traffic, 0);
    let a = alone.submit_job(&flow_count_job("a", &[3, 4, 5], &[9])).unwrap();
    alone.run_until(SimTime(5 * W));

    let mut shared = runtime(&traffic, 0);
    shared.submit_job(&flow_count_job("a", &[3, 4, 5], &[9])).unwrap();
    shared.submit_job(&flow_count_job("b", &[3, 4], &[9])).unwrap();
    let tm = build_traffic_matrix_job(
        shared.fabric().topology(),
        jump(),
        true,
        &JobOptions::new("tm"),
    )
    .unwrap();
    shared.submit_job(&tm).unwrap();
    shared.run_until(SimTime(5 * W));
    assert_eq!(alone.collect_results(&a), shared.collect_results(&a));
    assert!(shared.protocol_violations(&a).is_empty());
}

#[test]
fn late_submission_starts_at_next_boundary() {
    let mut rt = runtime(&traffic(), 0);
    rt.run_until(SimTime(130_000));
    let id = rt.submit_job(&flow_count_job("j", &[3, 4, 5], &[9])).unwrap();
    assert_eq!(rt.deployment(&id).unwrap().first_window, WindowId(2));
    rt.run_until(SimTime(5 * W));
    let windows: Vec<WindowId> = rt.collect_results(&id).iter().map(|r| r.window).collect();
    assert_eq!(windows, vec![WindowId(2), WindowId(3), WindowId(4)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn keys_land_on_their_designated_reducer(
        seed in 0u64..1_000,
        n_reducers in 1usize..=3,
        delay in 0u64..2_000,
    ) {
        let traffic = quiet_tail_traffic(seed, 15, W, 4);
        let mut rt = Runtime::new(
            dumbbell(1_000_000_000, 1_000_000),
            &traffic,
            RuntimeConfig {
                transport_delay: SimTime(delay),
                record_trace: false,
                record_shuffle: true,
            },
        )
        .unwrap();
        let reducers = [9u32, 1, 2];
        let job = flow_count_job("p", &[3, 4, 5, 6], &reducers[..n_reducers]);
        let id = rt.submit_job(&job).unwrap();
        rt.run_until(SimTime(4 * W + delay));
        prop_assert!(rt.protocol_violations(&id).is_empty());
        let results = rt.collect_results(&id);
        prop_assert_eq!(results.len(), 4 * n_reducers);
        let mut seen = BTreeSet::new();
        for r in &results {
            prop_assert!(seen.insert((r.window, r.reducer)));
            for e in &r.entries {
                let home = job.reducer_nodes[partition_key(&e.key.encode(), n_reducers)];
                prop_assert_eq!(home, r.reducer);
                prop_assert!(matches!(e.key, RecordKey::Server(_)));
            }
        }
        let log = rt.shuffle_log().unwrap();
        prop_assert_eq!(
            log.sent.iter().filter(|s| matches!(s.message, netmr::mr::ShuffleMessage::Record(_))).count(),
            log.folded.len()
        );
    }
}
