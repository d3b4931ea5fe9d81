//! Scenario files: topology, traffic, jobs and run controls in one JSON
//! document, plus the driver that runs them and checks results against the
//! oracle.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::apps::{
    build_congestion_job, build_ddos_job, build_elephant_job, build_traffic_matrix_job,
    decode_congestion, decode_ddos, decode_topn, decode_traffic_matrix, AppError, DdosParams,
    ElephantParams, FlowSlice, JobOptions,
};
use crate::model::{NodeId, SimTime, WindowId, WindowPolicy};
use crate::mr::{
    JobError, JobId, JobSpec, RecordKey, Runtime, RuntimeConfig, ShuffleLog, ShuffleMessage,
    Value, WindowedResult,
};
use crate::netsim::{
    generate_topology, generate_traffic, Topology, TopologyConfig, TopologyError,
    TopologyGenerator, Trace, TrafficError, TrafficGenerator, TrafficSpec,
};
use crate::oracle::{
    oracle_congestion, oracle_ddos, oracle_ingress_counts, oracle_topn, oracle_traffic_matrix,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_generator: Option<TopologyGenerator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_generator: Option<TrafficGenerator>,
    #[serde(default)]
    pub jobs: Vec<JobEntry>,
    pub run: RunControls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunControls {
    pub until_us: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transport_delay_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reducers: Option<Vec<NodeId>>,
    #[serde(default = "one")]
    pub reducer_count: usize,
    #[serde(default)]
    pub retention_windows: usize,
    #[serde(flatten)]
    pub app: AppConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "app", rename_all = "snake_case")]
pub enum AppConfig {
    Ddos {
        server_pool: BTreeSet<u32>,
        threshold: u64,
        window: WindowPolicy,
    },
    TrafficMatrix {
        window: WindowPolicy,
        #[serde(default)]
        with_latency: bool,
    },
    Congestion {
        window: WindowPolicy,
        #[serde(default)]
        top_k: Option<usize>,
    },
    Elephant {
        n: usize,
        k_counters: usize,
        window: WindowPolicy,
        #[serde(default)]
        mappers: Option<Vec<NodeId>>,
        #[serde(default)]
        partition: Option<Vec<FlowSlice>>,
    },
    /// A raw job spec; its `job_id` is replaced by the entry id.
    Custom { spec: JobSpec },
}

impl AppConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AppConfig::Ddos { .. } => "ddos",
            AppConfig::TrafficMatrix { .. } => "traffic_matrix",
            AppConfig::Congestion { .. } => "congestion",
            AppConfig::Elephant { .. } => "elephant",
            AppConfig::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{0}")]
    Config(String),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("traffic: {0}")]
    Traffic(#[from] TrafficError),
    #[error("job {job}: {source}")]
    App { job: String, source: AppError },
    #[error("job {job}: {source}")]
    Job { job: String, source: JobError },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let scn: Scenario = serde_json::from_str(text)?;
        if scn.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(scn.schema));
        }
        Ok(scn)
    }
}

/// Command-line style overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub until: Option<SimTime>,
    pub verify: bool,
    pub record_trace: bool,
}

/// A scenario resolved into concrete topology, traffic and job specs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub topology: Topology,
    pub traffic: TrafficSpec,
    pub jobs: Vec<(JobEntry, JobSpec)>,
    pub until: SimTime,
    pub transport_delay: SimTime,
    pub seed: u64,
}

pub fn prepare(scn: &Scenario, opts: &RunOptions) -> Result<Prepared, ScenarioError> {
    if scn.schema != SCHEMA_VERSION {
        return Err(ScenarioError::Schema(scn.schema));
    }
    let seed = opts.seed.unwrap_or(scn.run.seed);
    let config = match (&scn.topology, &scn.topology_generator) {
        (Some(c), None) => c.clone(),
        (None, Some(g)) => generate_topology(g, seed),
        _ => {
            return Err(ScenarioError::Config(
                "exactly one of topology and topology_generator is required".into(),
            ))
        }
    };
    let topology = Topology::build(&config)?;
    let traffic = match (&scn.traffic, &scn.traffic_generator) {
        (Some(t), None) => t.clone(),
        (None, Some(g)) => generate_traffic(g, &topology, seed)?,
        (None, None) => TrafficSpec::default(),
        (Some(_), Some(_)) => {
            return Err(ScenarioError::Config(
                "traffic and traffic_generator are mutually exclusive".into(),
            ))
        }
    };
    traffic.validate(&topology)?;

    let mut ids = BTreeSet::new();
    let mut jobs = Vec::new();
    for entry in &scn.jobs {
        if !ids.insert(entry.id.clone()) {
            return Err(ScenarioError::Config(format!("duplicate job id {}", entry.id)));
        }
        let spec = build_job(entry, &topology).map_err(|source| ScenarioError::App {
            job: entry.id.clone(),
            source,
        })?;
        spec.validate(&topology).map_err(|source| ScenarioError::Job {
            job: entry.id.clone(),
            source,
        })?;
        jobs.push((entry.clone(), spec));
    }
    Ok(Prepared {
        topology,
        traffic,
        jobs,
        until: opts.until.unwrap_or(SimTime(scn.run.until_us)),
        transport_delay: SimTime(scn.run.transport_delay_us),
        seed,
    })
}

pub fn build_job(entry: &JobEntry, topo: &Topology) -> Result<JobSpec, AppError> {
    let opts = JobOptions {
        job_id: JobId::new(entry.id.clone()),
        reducers: entry.reducers.clone(),
        reducer_count: entry.reducer_count,
        retention_windows: entry.retention_windows,
    };
    match &entry.app {
        AppConfig::Ddos {
            server_pool,
            threshold,
            window,
        } => build_ddos_job(
            &DdosParams {
                server_pool: server_pool.clone(),
                threshold: *threshold,
                window: *window,
            },
            topo,
            &opts,
        ),
        AppConfig::TrafficMatrix {
            window,
            with_latency,
        } => build_traffic_matrix_job(topo, *window, *with_latency, &opts),
        AppConfig::Congestion { window, top_k } => {
            build_congestion_job(topo, *window, *top_k, &opts)
        }
        AppConfig::Elephant {
            n,
            k_counters,
            window,
            mappers,
            partition,
        } => build_elephant_job(
            topo,
            &ElephantParams {
                n: *n,
                k_counters: *k_counters,
                window: *window,
                mappers: mappers.clone(),
                partition: partition.clone(),
            },
            &opts,
        ),
        AppConfig::Custom { spec } => {
            let mut spec = spec.clone();
            spec.job_id = opts.job_id;
            Ok(spec)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowCheck {
    pub window: WindowId,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub entry: JobEntry,
    pub spec: JobSpec,
    pub results: Vec<WindowedResult>,
    /// Decoded application report per window; absent for custom jobs.
    pub reports: BTreeMap<WindowId, serde_json::Value>,
    pub checks: Option<Vec<WindowCheck>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub until_us: u64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub jobs: Vec<JobOutcome>,
    pub trace: Trace,
    pub summary: Summary,
}

impl ScenarioOutcome {
    /// `None` when verification was not requested.
    pub fn verified(&self) -> Option<bool> {
        let mut any = false;
        let mut ok = true;
        for j in &self.jobs {
            if let Some(checks) = &j.checks {
                any = true;
                ok &= checks.iter().all(|c| c.ok);
            }
        }
        any.then_some(ok)
    }

    /// Output stream: results, decoded reports and checks per job, then a
    /// summary line.
    pub fn records(&self) -> Vec<serde_json::Value> {
        let mut out = Vec::new();
        for j in &self.jobs {
            for r in &j.results {
                let mut v = serde_json::to_value(r).expect("result serializes");
                v["type"] = json!("result");
                out.push(v);
            }
            for (w, report) in &j.reports {
                out.push(json!({
                    "type": "report",
                    "job": j.entry.id,
                    "app": j.entry.app.name(),
                    "window": w.0,
                    "report": report,
                }));
            }
            for c in j.checks.iter().flatten() {
                let mut v = serde_json::to_value(c).expect("check serializes");
                v["type"] = json!("verify");
                v["job"] = json!(j.entry.id);
                out.push(v);
            }
        }
        let mut summary = serde_json::to_value(self.summary).expect("summary serializes");
        summary["type"] = json!("summary");
        summary["verified"] = json!(self.verified());
        out.push(summary);
        out
    }
}

/// Runs a prepared scenario. A zero horizon skips the simulation entirely.
pub fn run_prepared(p: &Prepared, opts: &RunOptions) -> Result<ScenarioOutcome, ScenarioError> {
    let config = RuntimeConfig {
        transport_delay: p.transport_delay,
        record_trace: opts.record_trace || opts.verify,
        record_shuffle: opts.verify,
    };
    let mut rt = Runtime::new(p.topology.clone(), &p.traffic, config)?;
    if p.until == SimTime::ZERO {
        return Ok(ScenarioOutcome {
            jobs: Vec::new(),
            trace: Trace::default(),
            summary: Summary {
                seed: p.seed,
                until_us: 0,
                injected: 0,
                delivered: 0,
                dropped: 0,
                in_flight: 0,
            },
        });
    }
    for (entry, spec) in &p.jobs {
        rt.submit_job(spec).map_err(|source| ScenarioError::Job {
            job: entry.id.clone(),
            source,
        })?;
    }
    rt.run_until(p.until);
    let trace = rt.take_trace();

    let mut jobs = Vec::new();
    for (entry, spec) in &p.jobs {
        let results = rt.collect_results(&spec.job_id);
        let reports = decode_reports(&entry.app, &results);
        let checks = opts.verify.then(|| {
            let first = rt
                .deployment(&spec.job_id)
                .map_or(WindowId(0), |d| d.first_window);
            verify_job(
                entry,
                spec,
                &results,
                &trace,
                &p.topology,
                rt.shuffle_log().expect("shuffle log enabled"),
                first,
                p.until,
                p.transport_delay,
            )
        });
        jobs.push(JobOutcome {
            entry: entry.clone(),
            spec: spec.clone(),
            results,
            reports,
            checks,
        });
    }
    let fabric = rt.fabric();
    Ok(ScenarioOutcome {
        summary: Summary {
            seed: p.seed,
            until_us: p.until.micros(),
            injected: fabric.injected(),
            delivered: fabric.delivered().len() as u64,
            dropped: fabric.drops().len() as u64,
            in_flight: fabric.in_flight(),
        },
        jobs,
        trace,
    })
}

pub fn run_scenario(scn: &Scenario, opts: &RunOptions) -> Result<ScenarioOutcome, ScenarioError> {
    run_prepared(&prepare(scn, opts)?, opts)
}

fn decode_reports(
    app: &AppConfig,
    results: &[WindowedResult],
) -> BTreeMap<WindowId, serde_json::Value> {
    fn to_json<T: Serialize>(m: BTreeMap<WindowId, T>) -> BTreeMap<WindowId, serde_json::Value> {
        m.into_iter()
            .map(|(w, v)| (w, serde_json::to_value(v).expect("report serializes")))
            .collect()
    }
    match app {
        AppConfig::Ddos { .. } => to_json(decode_ddos(results)),
        AppConfig::TrafficMatrix { .. } => to_json(decode_traffic_matrix(results)),
        AppConfig::Congestion { top_k, .. } => to_json(decode_congestion(results, *top_k)),
        AppConfig::Elephant { n, .. } => to_json(decode_topn(results, *n)),
        AppConfig::Custom { .. } => BTreeMap::new(),
    }
}

/// Windows whose results must have reached the controller by `until`.
pub fn expected_windows(
    window: &WindowPolicy,
    first: WindowId,
    until: SimTime,
    transport_delay: SimTime,
) -> Vec<WindowId> {
    let mut out = Vec::new();
    let mut w = first;
    while window.end(w) + transport_delay <= until {
        out.push(w);
        w = WindowId(w.0 + 1);
    }
    out
}

fn diff<T: PartialEq + std::fmt::Debug>(got: &T, want: &T) -> Option<String> {
    (got != want).then(|| format!("got {got:?}, oracle {want:?}"))
}

/// Checks that every mapper's candidate set contains each flow heavier than
/// its window total over `k`, and that no candidate undercounts.
pub fn check_elephant_candidates(
    trace: &Trace,
    log: &ShuffleLog,
    job: &JobId,
    mappers: &[NodeId],
    window: &WindowPolicy,
    k_counters: usize,
    w: WindowId,
) -> Result<(), String> {
    for &m in mappers {
        let truth = oracle_ingress_counts(trace, m, window, w);
        let total: u64 = truth.values().sum();
        let mut candidates = BTreeMap::new();
        for s in &log.sent {
            if let ShuffleMessage::Record(r) = &s.message {
                if &r.job == job && r.mapper == m && r.window == w {
                    if let (RecordKey::Flow(f), Value::Estimate { packets, .. }) = (r.key, r.value)
                    {
                        candidates.insert(f, packets);
                    }
                }
            }
        }
        for (flow, &count) in &truth {
            if count * k_counters as u64 > total && !candidates.contains_key(flow) {
                return Err(format!(
                    "mapper {m}: heavy flow {flow} ({count} of {total}) missing from candidates"
                ));
            }
        }
        for (flow, &est) in &candidates {
            let t = truth.get(flow).copied().unwrap_or(0);
            if est < t {
                return Err(format!("mapper {m}: flow {flow} estimate {est} below true {t}"));
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn verify_job(
    entry: &JobEntry,
    spec: &JobSpec,
    results: &[WindowedResult],
    trace: &Trace,
    topo: &Topology,
    log: &ShuffleLog,
    first: WindowId,
    until: SimTime,
    delay: SimTime,
) -> Vec<WindowCheck> {
    let windows = expected_windows(&spec.window, first, until, delay);
    let mut per_window: BTreeMap<WindowId, Option<String>> =
        windows.iter().map(|&w| (w, None)).collect();
    let note = |m: &mut BTreeMap<WindowId, Option<String>>, w: WindowId, d: Option<String>| {
        if let Some(d) = d {
            m.entry(w).or_insert(None).get_or_insert(d);
        }
    };

    for &w in &windows {
        let have = results.iter().filter(|r| r.window == w).count();
        if have != spec.reducer_nodes.len() {
            note(
                &mut per_window,
                w,
                Some(format!(
                    "{have} results for {} reducers",
                    spec.reducer_nodes.len()
                )),
            );
        }
    }

    match &entry.app {
        AppConfig::Ddos {
            server_pool,
            threshold,
            window,
        } => {
            let params = DdosParams {
                server_pool: server_pool.clone(),
                threshold: *threshold,
                window: *window,
            };
            let got = decode_ddos(results);
            let want = oracle_ddos(trace, topo, &params, &windows);
            for &w in &windows {
                let g = got.get(&w).cloned().unwrap_or_default();
                note(&mut per_window, w, diff(&g, &want[&w]));
            }
        }
        AppConfig::TrafficMatrix {
            window,
            with_latency,
        } => {
            let got = decode_traffic_matrix(results);
            let want = oracle_traffic_matrix(trace, topo, window, *with_latency, &windows);
            for &w in &windows {
                let g = got.get(&w).cloned().unwrap_or_default();
                note(&mut per_window, w, diff(&g, &want[&w]));
            }
        }
        AppConfig::Congestion { window, top_k } => {
            let got = decode_congestion(results, *top_k);
            let want = oracle_congestion(trace, window, *top_k, &windows);
            for &w in &windows {
                let g = got.get(&w).cloned().unwrap_or_default();
                note(&mut per_window, w, diff(&g, &want[&w]));
            }
        }
        AppConfig::Elephant {
            n,
            k_counters,
            window,
            partition,
            ..
        } => {
            let got = decode_topn(results, *n);
            if partition.is_some() {
                let want = oracle_topn(trace, *n, window, &windows);
                for &w in &windows {
                    let g = got.get(&w).cloned().unwrap_or_default();
                    note(&mut per_window, w, diff(&g, &want[&w]));
                }
            } else {
                let truth = oracle_topn(trace, usize::MAX, window, &windows);
                for &w in &windows {
                    note(
                        &mut per_window,
                        w,
                        check_elephant_candidates(
                            trace,
                            log,
                            &spec.job_id,
                            &spec.mapper_nodes,
                            window,
                            *k_counters,
                            w,
                        )
                        .err(),
                    );
                    let exact: BTreeMap<_, _> =
                        truth[&w].flows.iter().map(|f| (f.flow, f.packets)).collect();
                    for f in got.get(&w).map(|r| r.flows.as_slice()).unwrap_or(&[]) {
                        let t = exact.get(&f.flow).copied().unwrap_or(0);
                        if f.packets < t {
                            note(
                                &mut per_window,
                                w,
                                Some(format!("flow {} reported {} below true {t}", f.flow, f.packets)),
                            );
                        }
                    }
                }
            }
        }
        AppConfig::Custom { .. } => {}
    }

    per_window
        .into_iter()
        .map(|(window, detail)| WindowCheck {
            window,
            ok: detail.is_none(),
            detail,
        })
        .collect()
}
