use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::mpsc;

use super::job::{JobError, JobSpec};
use super::mapper::{CachedWindow, MapperState};
use super::reducer::{ProtocolViolation, ReducerState};
use super::record::{IntermediateRecord, JobId, ShuffleMessage, WindowedResult};
use crate::model::{NodeId, SimTime, WindowId, WindowPolicy};
use crate::netsim::{
    compute_routes, EventKey, Fabric, FabricOptions, Phase, Topology, Trace, TrafficError,
    TrafficSpec,
};
use crate::probes::{EmissionPayload, ProbeEmission, ProbeId, ProbeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RuntimeConfig {
    /// Constant one-way delay of the control channel between devices.
    pub transport_delay: SimTime,
    pub record_trace: bool,
    /// Keep a log of every shuffle message sent and folded.
    pub record_shuffle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentMessage {
    pub time: SimTime,
    pub from: NodeId,
    pub to: NodeId,
    pub message: ShuffleMessage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShuffleLog {
    pub sent: Vec<SentMessage>,
    /// Records as folded, with the reducer that folded them.
    pub folded: Vec<(NodeId, IntermediateRecord)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub mappers: Vec<NodeId>,
    pub reducers: Vec<NodeId>,
    pub probes: Vec<(NodeId, ProbeId)>,
    pub first_window: WindowId,
}

#[derive(Debug)]
enum Control {
    Tick { job: JobId, boundary: SimTime },
    Deliver { to: NodeId, message: ShuffleMessage },
    Cancel { job: JobId },
}

#[derive(Debug)]
struct ControlEvent {
    key: EventKey,
    control: Control,
}

impl PartialEq for ControlEvent {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for ControlEvent {}
impl PartialOrd for ControlEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ControlEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug)]
struct Job {
    window: WindowPolicy,
    mappers: BTreeMap<NodeId, MapperState>,
    /// Counter probes per mapper, read at every slide boundary.
    counters: BTreeMap<NodeId, Vec<ProbeId>>,
    probes: Vec<(NodeId, ProbeId)>,
    reducers: BTreeMap<NodeId, ReducerState>,
    reducer_ids: Vec<NodeId>,
    first_window: WindowId,
    results: Vec<WindowedResult>,
    subscribers: Vec<mpsc::Sender<WindowedResult>>,
    violations: Vec<ProtocolViolation>,
    active: bool,
    cancel_requested: bool,
}

/// Controller plus every device's local processor, driven by the data-plane
/// simulation. Control-plane work (mapper ticks, shuffle delivery, job
/// commands) shares the timeline with packets; at equal times commands run
/// first, then local-processor work, then packets.
#[derive(Debug)]
pub struct Runtime {
    fabric: Fabric,
    config: RuntimeConfig,
    control: BinaryHeap<Reverse<ControlEvent>>,
    order: u64,
    jobs: BTreeMap<JobId, Job>,
    probe_owner: HashMap<ProbeId, (JobId, NodeId)>,
    data_processed_at_now: bool,
    shuffle: Option<ShuffleLog>,
}

impl Runtime {
    pub fn new(
        topo: Topology,
        traffic: &TrafficSpec,
        config: RuntimeConfig,
    ) -> Result<Self, TrafficError> {
        let routes = compute_routes(&topo);
        let fabric = Fabric::new(
            topo,
            routes,
            traffic,
            FabricOptions {
                record_trace: config.record_trace,
            },
        )?;
        Ok(Runtime {
            fabric,
            config,
            control: BinaryHeap::new(),
            order: 0,
            jobs: BTreeMap::new(),
            probe_owner: HashMap::new(),
            data_processed_at_now: false,
            shuffle: config.record_shuffle.then(ShuffleLog::default),
        })
    }

    pub fn now(&self) -> SimTime {
        self.fabric.now()
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn take_trace(&mut self) -> Trace {
        self.fabric.take_trace()
    }

    pub fn shuffle_log(&self) -> Option<&ShuffleLog> {
        self.shuffle.as_ref()
    }

    fn schedule(&mut self, time: SimTime, phase: Phase, node: NodeId, control: Control) {
        self.order += 1;
        self.control.push(Reverse(ControlEvent {
            key: EventKey {
                time,
                phase,
                node,
                seq: 0,
                order: self.order,
            },
            control,
        }));
    }

    /// Deploys a job at the current time. Windows starting before now are
    /// never reported.
    pub fn submit_job(&mut self, spec: &JobSpec) -> Result<JobId, JobError> {
        spec.validate(self.fabric.topology())?;
        if self.jobs.contains_key(&spec.job_id) {
            return Err(JobError::DuplicateJob(spec.job_id.clone()));
        }
        let spec = spec.scoped();
        let now = self.now();
        // Packets already processed at `now` belong to no window of this job.
        let from = if self.data_processed_at_now {
            SimTime(now.0 + 1)
        } else {
            now
        };
        let first_window = spec.window.first_window_from(from);

        let mut probes = Vec::new();
        let mut counters: BTreeMap<NodeId, Vec<ProbeId>> = BTreeMap::new();
        for p in &spec.probe_plan {
            let id = match self.fabric.install_probe(p.attach, p.spec.clone()) {
                Ok(id) => id,
                Err(e) => {
                    for &(node, id) in &probes {
                        let _ = self.fabric.remove_probe(node, id);
                        self.probe_owner.remove(&id);
                    }
                    return Err(e.into());
                }
            };
            probes.push((p.attach.node, id));
            if matches!(p.spec.kind, ProbeKind::Counter { .. }) {
                counters.entry(p.attach.node).or_default().push(id);
            }
            self.probe_owner
                .insert(id, (spec.job_id.clone(), p.attach.node));
        }

        let mappers = spec
            .mapper_nodes
            .iter()
            .map(|&n| {
                (
                    n,
                    MapperState::new(
                        spec.job_id.clone(),
                        n,
                        spec.reducer_nodes.clone(),
                        spec.map_operator.clone(),
                        spec.window,
                        first_window,
                        spec.retention_windows,
                    ),
                )
            })
            .collect();
        let reducers = spec
            .reducer_nodes
            .iter()
            .map(|&n| {
                (
                    n,
                    ReducerState::new(
                        spec.job_id.clone(),
                        n,
                        spec.mapper_nodes.iter().copied(),
                        spec.reduce_operator.clone(),
                        spec.retention_windows,
                    ),
                )
            })
            .collect();

        let slide = spec.window.slide().micros();
        let first_tick = SimTime(now.0.div_ceil(slide) * slide);
        let tick_node = spec.mapper_nodes.iter().copied().min().expect("mappers");
        self.schedule(
            first_tick,
            Phase::Local,
            tick_node,
            Control::Tick {
                job: spec.job_id.clone(),
                boundary: first_tick,
            },
        );
        log::info!(
            "job {} submitted at {now}: {} mappers, {} reducers, {} probes, first window {}",
            spec.job_id,
            spec.mapper_nodes.len(),
            spec.reducer_nodes.len(),
            probes.len(),
            first_window.0
        );
        self.jobs.insert(
            spec.job_id.clone(),
            Job {
                window: spec.window,
                mappers,
                counters,
                probes,
                reducers,
                reducer_ids: spec.reducer_nodes.clone(),
                first_window,
                results: Vec::new(),
                subscribers: Vec::new(),
                violations: Vec::new(),
                active: true,
                cancel_requested: false,
            },
        );
        Ok(spec.job_id)
    }

    /// Schedules teardown of a job at `at` (no earlier than now).
    pub fn cancel_job(&mut self, job: &JobId, at: SimTime) -> Result<(), JobError> {
        let j = self
            .jobs
            .get_mut(job)
            .filter(|j| j.active && !j.cancel_requested)
            .ok_or_else(|| JobError::UnknownJob(job.clone()))?;
        j.cancel_requested = true;
        let at = at.max(self.now());
        self.schedule(at, Phase::Command, NodeId(0), Control::Cancel { job: job.clone() });
        Ok(())
    }

    pub fn deployment(&self, job: &JobId) -> Option<Deployment> {
        let j = self.jobs.get(job)?;
        Some(Deployment {
            mappers: j.mappers.keys().copied().collect(),
            reducers: j.reducers.keys().copied().collect(),
            probes: j.probes.clone(),
            first_window: j.first_window,
        })
    }

    pub fn is_active(&self, job: &JobId) -> bool {
        self.jobs.get(job).is_some_and(|j| j.active)
    }

    /// Results finalized so far, ordered by (window, reducer).
    pub fn collect_results(&self, job: &JobId) -> Vec<WindowedResult> {
        let mut out = self
            .jobs
            .get(job)
            .map(|j| j.results.clone())
            .unwrap_or_default();
        out.sort_by_key(|r| (r.window, r.reducer));
        out
    }

    /// Stream of results finalized from now on, in finalization order.
    pub fn subscribe(&mut self, job: &JobId) -> Option<mpsc::Receiver<WindowedResult>> {
        let j = self.jobs.get_mut(job)?;
        let (tx, rx) = mpsc::channel();
        j.subscribers.push(tx);
        Some(rx)
    }

    pub fn protocol_violations(&self, job: &JobId) -> &[ProtocolViolation] {
        self.jobs.get(job).map_or(&[], |j| &j.violations)
    }

    /// Retained buffer of `window` on `node` (mapper side first), if still
    /// within the job's retention depth.
    pub fn query_cache(&self, node: NodeId, job: &JobId, window: WindowId) -> Option<&CachedWindow> {
        let j = self.jobs.get(job)?;
        j.mappers
            .get(&node)
            .and_then(|m| m.cached(window))
            .or_else(|| j.reducers.get(&node).and_then(|r| r.cached(window)))
    }

    /// Processes every event with time `<= until`, then sets the clock to `until`.
    pub fn run_until(&mut self, until: SimTime) {
        loop {
            let c = self
                .control
                .peek()
                .map(|Reverse(e)| e.key)
                .filter(|k| k.time <= until);
            let d = self.fabric.peek_key().filter(|k| k.time <= until);
            match (c, d) {
                (Some(ck), dk) if dk.is_none_or(|dk| ck < dk) => {
                    let Reverse(ev) = self.control.pop().expect("peeked");
                    if ev.key.time > self.now() {
                        self.data_processed_at_now = false;
                    }
                    self.fabric.advance_clock(ev.key.time);
                    self.handle(ev.control);
                }
                (_, Some(_)) => {
                    self.fabric.step();
                    self.data_processed_at_now = true;
                    for em in self.fabric.take_emissions() {
                        self.route(em);
                    }
                }
                _ => break,
            }
        }
        if until > self.now() {
            self.data_processed_at_now = false;
        }
        self.fabric.advance_clock(until);
    }

    fn route(&mut self, em: ProbeEmission) {
        let Some((job, node)) = self.probe_owner.get(&em.probe) else {
            return;
        };
        if let Some(m) = self
            .jobs
            .get_mut(job)
            .filter(|j| j.active)
            .and_then(|j| j.mappers.get_mut(node))
        {
            m.ingest(&em);
        }
    }

    fn handle(&mut self, control: Control) {
        match control {
            Control::Tick { job, boundary } => self.tick(job, boundary),
            Control::Deliver { to, message } => self.deliver(to, message),
            Control::Cancel { job } => self.cancel(job),
        }
    }

    fn tick(&mut self, job_id: JobId, boundary: SimTime) {
        let now = self.now();
        let delay = self.config.transport_delay;
        let Some(job) = self.jobs.get_mut(&job_id).filter(|j| j.active) else {
            return;
        };
        let mut outgoing = Vec::new();
        for (node, mapper) in job.mappers.iter_mut() {
            if let Some(ids) = job.counters.get(node) {
                for &id in ids {
                    match self.fabric.read_and_reset(id) {
                        Ok(snap) if boundary > SimTime::ZERO => {
                            mapper.ingest(&ProbeEmission {
                                probe: id,
                                node: *node,
                                time: SimTime(boundary.0 - 1),
                                payload: EmissionPayload::CounterSnapshot(snap),
                            });
                        }
                        Ok(_) => {}
                        Err(e) => log::warn!("job {job_id}: counter read failed: {e}"),
                    }
                }
            }
            for w in mapper.due(boundary) {
                for (to, message) in mapper.flush(w, now) {
                    outgoing.push((*node, to, message));
                }
            }
        }
        let next = boundary + job.window.slide();
        let tick_node = *job.mappers.keys().next().expect("mappers");
        for (from, to, message) in outgoing {
            if let Some(log) = &mut self.shuffle {
                log.sent.push(SentMessage {
                    time: now,
                    from,
                    to,
                    message: message.clone(),
                });
            }
            self.schedule(now + delay, Phase::Local, to, Control::Deliver { to, message });
        }
        self.schedule(
            next,
            Phase::Local,
            tick_node,
            Control::Tick {
                job: job_id,
                boundary: next,
            },
        );
    }

    fn deliver(&mut self, to: NodeId, message: ShuffleMessage) {
        let now = self.now();
        let Some(job) = self.jobs.get_mut(message.job()).filter(|j| j.active) else {
            return;
        };
        let Some(reducer) = job.reducers.get_mut(&to) else {
            return;
        };
        match reducer.ingest(&message, now) {
            Ok(result) => {
                if let (Some(log), ShuffleMessage::Record(r)) = (&mut self.shuffle, &message) {
                    log.folded.push((to, r.clone()));
                }
                if let Some(result) = result {
                    log::debug!(
                        "job {} window {} finalized on {} with {} entries",
                        result.job,
                        result.window.0,
                        result.reducer,
                        result.entries.len()
                    );
                    job.subscribers
                        .retain(|tx| tx.send(result.clone()).is_ok());
                    job.results.push(result);
                }
            }
            Err(v) => {
                log::error!("job {}: {v}", message.job());
                job.violations.push(v);
            }
        }
    }

    fn cancel(&mut self, job_id: JobId) {
        let Some(job) = self.jobs.get_mut(&job_id) else {
            return;
        };
        for &(node, id) in &job.probes {
            if let Err(e) = self.fabric.remove_probe(node, id) {
                log::warn!("job {job_id}: removing probe {id}: {e}");
            }
            self.probe_owner.remove(&id);
        }
        job.active = false;
        job.mappers.clear();
        job.reducers.clear();
        job.counters.clear();
        job.subscribers.clear();
        log::info!("job {job_id} cancelled at {}", self.fabric.now());
    }

    /// Reducer nodes of a job, in spec order.
    pub fn reducer_nodes(&self, job: &JobId) -> &[NodeId] {
        self.jobs.get(job).map_or(&[], |j| &j.reducer_ids)
    }
}
