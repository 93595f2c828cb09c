//! Discrete-event engine binding forwarders, ENs and devices over a topology.

pub mod topology;
pub mod workload;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ModeSetting};
use crate::control::{assign_buckets, install_routes, rebalance, rfib_for_node, Assignment, Routes};
use crate::device::{Device, DeviceConfig, DeviceTimer, HashingDelay, OffloadMode, OffloadSession};
use crate::edge_node::{ArrivalOutcome, EdgeNode, EdgeNodeConfig, EnCounters, EnRecord, EnTimer, ExecModel, SearchDelay};
use crate::error::{Error, Result};
use crate::forwarder::{DelayModel, Decision, Forwarder, LookupPath};
use crate::lsh::{encode_hash, HashFamily, HashFamilyConfig};
use crate::names::{parse_name, ParsedName};
use crate::packet::{ms_to_us, AppAction, FaceId, NodeId, Packet, SimTime, APP_FACE};
use topology::{NodeRole, Topology};
use workload::{generate_workload, TaskSpec, Workload};

/// Default session timeout once packet loss is enabled.
pub const LOSSY_SESSION_TIMEOUT_US: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: SimTime,
    pub node: String,
    pub event_kind: String,
    pub name: String,
    pub detail: Value,
}

pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Observed per-hop processing charges of one lookup path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeStats {
    pub count: u64,
    pub min_us: u64,
    pub max_us: u64,
    pub total_us: u64,
}

impl ChargeStats {
    fn add(&mut self, us: u64) {
        if self.count == 0 {
            self.min_us = us;
            self.max_us = us;
        } else {
            self.min_us = self.min_us.min(us);
            self.max_us = self.max_us.max(us);
        }
        self.count += 1;
        self.total_us += us;
    }
}

/// Everything a run leaves behind for post-processing.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub hash: HashFamilyConfig,
    /// Sorted by nonce; nonce i + 1 belongs to workload task i.
    pub sessions: Vec<OffloadSession>,
    pub en_records: Vec<EnRecord>,
    pub en_counters: BTreeMap<String, EnCounters>,
    /// rFIB selections per task nonce, network-wide.
    pub rfib_lookups: BTreeMap<u64, u32>,
    pub decisions: BTreeMap<String, u64>,
    pub charges: BTreeMap<String, ChargeStats>,
    /// Initial layouts at time 0 followed by every rebalance.
    pub assignments: Vec<(SimTime, Assignment)>,
    pub segments_served: u64,
    pub packets_dropped: u64,
    pub end_time: SimTime,
    pub events: u64,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug)]
enum EventKind {
    Offload(usize),
    FromApp { node: NodeId, packet: Packet },
    Arrive { node: NodeId, face: FaceId, packet: Packet },
    ToApp { node: NodeId, packet: Packet },
    EnTimer { node: NodeId, timer: EnTimer },
    DeviceTimer { node: NodeId, timer: DeviceTimer },
    Rebalance,
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that BinaryHeap pops the earliest event.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug)]
enum App {
    None,
    Edge(Box<EdgeNode>),
    Device(Box<Device>),
}

#[derive(Debug)]
struct SimNode {
    forwarder: Forwarder,
    app: App,
}

pub struct Simulation {
    config: ExperimentConfig,
    topo: Topology,
    tasks: Vec<TaskSpec>,
    device_nodes: Vec<NodeId>,
    nodes: Vec<SimNode>,
    routes: Routes,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: SimTime,
    rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    nonce_device: BTreeMap<u64, NodeId>,
    assignments: BTreeMap<String, Assignment>,
    last_scratch: BTreeMap<String, u64>,
    trace_on: bool,
    out: RunOutput,
}

impl Simulation {
    /// Builds topology and workload from the config for the given seed.
    pub fn from_config(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        config.seed = seed;
        let topo = config.build_topology_for_seed(seed)?;
        let workload = generate_workload(&config.workload_params(topo.devices().count()))?;
        Self::with_parts(config, topo, workload)
    }

    /// Runs an explicit topology and task list under `config`; tasks address
    /// devices by their position among the topology's devices.
    pub fn with_parts(config: ExperimentConfig, topo: Topology, workload: Workload) -> Result<Self> {
        let seed = config.seed;
        let family_cfg = config.hash.family();
        let family = Arc::new(HashFamily::new(family_cfg)?);
        let delays = DelayModel {
            fib_us: (config.delays.fib_us[0], config.delays.fib_us[1]),
            rfib_us: (config.delays.rfib_us[0], config.delays.rfib_us[1]),
        };
        delays.validate()?;
        let (routes, mut fibs) = install_routes(&topo)?;

        let session_timeout_us = config
            .loss
            .session_timeout_ms
            .map(ms_to_us)
            .or((config.loss.probability > 0.0).then_some(LOSSY_SESSION_TIMEOUT_US));
        let mode = match config.workload.mode {
            ModeSetting::Inline => OffloadMode::Inline,
            ModeSetting::Push => OffloadMode::Push,
            ModeSetting::Pull => OffloadMode::Pull {
                input_size_bytes: config.workload.input_size_bytes,
            },
        };
        let exec_models: BTreeMap<String, ExecModel> = config
            .services
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    ExecModel {
                        min_us: ms_to_us(s.exec_min_ms),
                        max_us: ms_to_us(s.exec_max_ms),
                        nominal_us: ms_to_us(s.nominal_ms),
                    },
                )
            })
            .collect();

        let mut nodes = Vec::with_capacity(topo.nodes().len());
        let mut device_nodes = Vec::new();
        for info in topo.nodes() {
            let cs = match info.role {
                NodeRole::Router => config.capacity.cs,
                NodeRole::Device => config.capacity.device_cs,
            };
            let mut forwarder = Forwarder::new(info.id, cs, delays);
            forwarder.pit_lifetime_us = ms_to_us(config.delays.pit_lifetime_ms);
            forwarder.fib = fibs.remove(&info.id).unwrap_or_default();
            let app = if let Some(prefix) = &info.en_prefix {
                let services = info
                    .services
                    .iter()
                    .filter_map(|s| exec_models.get(s).map(|m| (s.clone(), *m)))
                    .collect();
                let mut en = EdgeNodeConfig::new(prefix, services);
                en.store_capacity = config.capacity.en_store;
                en.probe_radius = config.hash.probe_radius;
                en.search_delay = match config.delays.search_ms {
                    Some(ms) => SearchDelay::Fixed { us: ms_to_us(ms) },
                    None => SearchDelay::Measured,
                };
                en.ewma_alpha = config.edge.ewma_alpha;
                en.segment_size = config.edge.segment_size;
                en.max_retries = config.edge.max_retries;
                en.initial_rtt_us = ms_to_us(config.edge.initial_rtt_ms);
                App::Edge(Box::new(EdgeNode::new(en, family_cfg)?))
            } else if let Some(prefix) = &info.device_prefix {
                device_nodes.push(info.id);
                let mut dc = DeviceConfig::new(prefix, info.id);
                dc.hashing = match config.delays.hashing_ms {
                    Some(ms) => HashingDelay::Fixed { us: ms_to_us(ms) },
                    None => HashingDelay::Measured,
                };
                dc.reuse = config.workload.reuse;
                dc.mode = mode;
                dc.segment_size = config.edge.segment_size;
                dc.session_timeout_us = session_timeout_us;
                App::Device(Box::new(Device::new(dc, family.clone())?))
            } else {
                App::None
            };
            nodes.push(SimNode { forwarder, app });
        }
        if let Some(t) = workload.tasks.iter().find(|t| t.device >= device_nodes.len()) {
            return Err(Error::Config(format!("task {} addresses missing device {}", t.index, t.device)));
        }

        let mut sim = Self {
            tasks: workload.tasks,
            device_nodes,
            nodes,
            routes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            rng: stream(seed, 1),
            loss_rng: stream(seed, 2),
            nonce_device: BTreeMap::new(),
            assignments: BTreeMap::new(),
            last_scratch: BTreeMap::new(),
            trace_on: config.output.trace,
            out: RunOutput {
                seed,
                hash: family_cfg,
                sessions: Vec::new(),
                en_records: Vec::new(),
                en_counters: BTreeMap::new(),
                rfib_lookups: BTreeMap::new(),
                decisions: BTreeMap::new(),
                charges: BTreeMap::new(),
                assignments: Vec::new(),
                segments_served: 0,
                packets_dropped: 0,
                end_time: 0,
                events: 0,
                trace: Vec::new(),
            },
            topo,
            config,
        };
        sim.install_rfibs()?;
        Ok(sim)
    }

    fn install_rfibs(&mut self) -> Result<()> {
        if !self.config.rfib.enabled {
            return Ok(());
        }
        let family = self.config.hash.family();
        let mut layouts: BTreeMap<String, Assignment> = self
            .config
            .static_assignments()
            .into_iter()
            .map(|a| (a.service.clone(), a))
            .collect();
        for s in self.config.service_names() {
            if layouts.contains_key(&s) {
                continue;
            }
            let ens: Vec<String> = self
                .topo
                .ens()
                .filter(|n| n.services.contains(&s))
                .filter_map(|n| n.en_prefix.clone())
                .collect();
            if !ens.is_empty() {
                layouts.insert(s.clone(), assign_buckets(&s, &ens, &family)?);
            }
        }
        for a in layouts.into_values() {
            self.apply_assignment(a)?;
        }
        Ok(())
    }

    /// Installs a layout on every router at the current instant.
    fn apply_assignment(&mut self, a: Assignment) -> Result<()> {
        a.validate()?;
        for info in self.topo.routers() {
            let entries = rfib_for_node(&self.topo, &self.routes, info.id, &a)?;
            self.nodes[info.id.0 as usize]
                .forwarder
                .rfib
                .install(&a.service, a.bits_per_table, entries)?;
        }
        if self.trace_on {
            self.trace(NodeId(u32::MAX), "rfib_install", &a.service, json!({ "ranges": a.ranges }));
        }
        self.out.assignments.push((self.now, a.clone()));
        self.assignments.insert(a.service.clone(), a);
        Ok(())
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, kind });
    }

    fn trace(&mut self, node: NodeId, kind: &str, name: &str, detail: Value) {
        let node = if node.0 == u32::MAX { "control".to_string() } else { node.to_string() };
        self.out.trace.push(TraceRecord {
            time_us: self.now,
            node,
            event_kind: kind.to_string(),
            name: name.to_string(),
            detail,
        });
    }

    /// Runs to quiescence.
    pub fn run(mut self) -> Result<RunOutput> {
        for i in 0..self.tasks.len() {
            let t = self.tasks[i].time;
            self.schedule(t, EventKind::Offload(i));
        }
        if self.config.rebalance.enabled && !self.assignments.is_empty() {
            self.schedule(ms_to_us(self.config.rebalance.window_ms), EventKind::Rebalance);
        }
        while let Some(ev) = self.queue.pop() {
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            self.out.events += 1;
            self.dispatch(ev.kind)?;
        }
        self.finish()
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Offload(i) => self.offload(i),
            EventKind::FromApp { node, packet } => {
                self.forward(node, APP_FACE, packet);
                Ok(())
            }
            EventKind::Arrive { node, face, packet } => {
                self.forward(node, face, packet);
                Ok(())
            }
            EventKind::ToApp { node, packet } => {
                self.deliver_to_app(node, packet);
                Ok(())
            }
            EventKind::EnTimer { node, timer } => {
                let actions = match &mut self.nodes[node.0 as usize].app {
                    App::Edge(en) => en.handle_timer(timer, self.now),
                    _ => Vec::new(),
                };
                self.after_en(node, actions);
                Ok(())
            }
            EventKind::DeviceTimer { node, timer } => {
                let actions = match &mut self.nodes[node.0 as usize].app {
                    App::Device(d) => d.handle_timer(timer, self.now),
                    _ => Vec::new(),
                };
                self.after_device(node, actions);
                Ok(())
            }
            EventKind::Rebalance => self.rebalance(),
        }
    }

    fn offload(&mut self, i: usize) -> Result<()> {
        let task = self.tasks[i].clone();
        let node = self.device_nodes[task.device];
        let nonce = i as u64 + 1;
        self.nonce_device.insert(nonce, node);
        let App::Device(dev) = &mut self.nodes[node.0 as usize].app else {
            unreachable!("device_nodes only lists devices");
        };
        let label = task.input.label;
        let hashing_us = dev.hashing_charge_us();
        let actions = dev.offload(nonce, &task.service, task.input, task.threshold, task.deadline_us, self.now)?;
        if self.trace_on {
            let name = dev.session(nonce).map(|s| s.task_name.clone()).unwrap_or_default();
            self.trace(node, "offload", &name, json!({ "nonce": nonce, "label": label, "hashing_us": hashing_us }));
        }
        self.after_device(node, actions);
        Ok(())
    }

    fn forward(&mut self, node: NodeId, in_face: FaceId, packet: Packet) {
        let (is_interest, nonce, name, payload_kind) = match &packet {
            Packet::Interest(i) => (true, i.nonce, i.name.clone(), None),
            Packet::Data(d) => (false, 0, d.name.clone(), Some(d.payload.kind())),
        };
        let fwd = &mut self.nodes[node.0 as usize].forwarder;
        let outcome = match packet {
            Packet::Interest(i) => fwd.on_interest(i, in_face, self.now, &mut self.rng),
            Packet::Data(d) => fwd.on_data(d, in_face, self.now, &mut self.rng),
        };
        *self.out.decisions.entry(outcome.decision.label().to_string()).or_default() += 1;
        if let Some(path) = outcome.path {
            self.out.charges.entry(path.as_str().to_string()).or_default().add(outcome.charge_us);
        }
        match &outcome.decision {
            Decision::ForwardedByRfib { .. } => *self.out.rfib_lookups.entry(nonce).or_default() += 1,
            Decision::Aggregated if is_interest => {
                let offload = matches!(parse_name(&name), Ok(ParsedName::Task(t)) if !t.is_result_fetch());
                if offload {
                    if let Some(&dev) = self.nonce_device.get(&nonce) {
                        if let App::Device(d) = &mut self.nodes[dev.0 as usize].app {
                            d.mark_aggregated(nonce);
                        }
                    }
                }
            }
            _ => {}
        }
        if self.trace_on {
            let faces: Vec<u32> = outcome.sends.iter().map(|(f, _)| f.0).collect();
            let mut detail = json!({
                "packet": if is_interest { "interest" } else { "data" },
                "in_face": in_face.0,
                "faces": faces,
                "charge_us": outcome.charge_us,
                "path": outcome.path.map(LookupPath::as_str),
            });
            if is_interest {
                detail["nonce"] = json!(nonce);
            }
            if let Some(k) = payload_kind {
                detail["payload"] = json!(k);
            }
            if let Decision::ForwardedByRfib { en_prefix, .. } = &outcome.decision {
                detail["en"] = json!(en_prefix);
            }
            self.trace(node, outcome.decision.label(), &name, detail);
        }
        let base = self.now + outcome.charge_us;
        for (face, packet) in outcome.sends {
            if face == APP_FACE {
                self.schedule(base, EventKind::ToApp { node, packet });
                continue;
            }
            let Some(adj) = self.topo.via_face(node, face).copied() else {
                continue;
            };
            let p = self.config.loss.probability;
            if p > 0.0 && self.loss_rng.random_bool(p) {
                self.out.packets_dropped += 1;
                if self.trace_on {
                    self.trace(node, "drop", packet.name(), json!({ "face": face.0 }));
                }
                continue;
            }
            self.schedule(
                base + adj.delay_us,
                EventKind::Arrive { node: adj.peer, face: adj.peer_face, packet },
            );
        }
    }

    fn deliver_to_app(&mut self, node: NodeId, packet: Packet) {
        let now = self.now;
        match &mut self.nodes[node.0 as usize].app {
            App::Edge(en) => {
                let actions = match packet {
                    Packet::Interest(i) => en.handle_interest(i, now, &mut self.rng),
                    Packet::Data(d) => en.handle_data(d, now, &mut self.rng),
                };
                self.after_en(node, actions);
            }
            App::Device(dev) => {
                let actions = match packet {
                    Packet::Interest(i) => dev.handle_interest(i, now),
                    Packet::Data(d) => dev.handle_data(d, now),
                };
                self.after_device(node, actions);
            }
            App::None => {}
        }
    }

    fn after_en(&mut self, node: NodeId, actions: Vec<AppAction<EnTimer>>) {
        let App::Edge(en) = &mut self.nodes[node.0 as usize].app else { return };
        let records = en.take_records();
        if self.trace_on {
            for r in &records {
                let (kind, name, detail) = match r {
                    EnRecord::Arrival(a) => {
                        let kind = match a.outcome {
                            ArrivalOutcome::Reused => "en_reuse",
                            ArrivalOutcome::Scratch => "en_scratch",
                            ArrivalOutcome::Joined => "en_join",
                        };
                        let hash = a.hash.as_ref().map(encode_hash).unwrap_or_default();
                        (kind, a.service.clone(), json!({ "nonce": a.nonce, "hash": hash, "reused_id": a.reused_id }))
                    }
                    EnRecord::StoreInsert { service, id, hash, .. } => {
                        ("store_insert", service.clone(), json!({ "id": id, "hash": encode_hash(hash) }))
                    }
                    EnRecord::StoreEvict { service, id, .. } => ("store_evict", service.clone(), json!({ "id": id })),
                };
                self.trace(node, kind, &name, detail);
            }
        }
        self.out.en_records.extend(records);
        for a in actions {
            match a {
                AppAction::Send { delay_us, packet } => {
                    self.schedule(self.now + delay_us, EventKind::FromApp { node, packet })
                }
                AppAction::Timer { delay_us, timer } => {
                    self.schedule(self.now + delay_us, EventKind::EnTimer { node, timer })
                }
            }
        }
    }

    fn after_device(&mut self, node: NodeId, actions: Vec<AppAction<DeviceTimer>>) {
        let App::Device(dev) = &mut self.nodes[node.0 as usize].app else { return };
        let finished = dev.take_finished();
        if self.trace_on {
            let done: Vec<(String, Value)> = finished
                .iter()
                .filter_map(|n| dev.session(*n))
                .map(|s| {
                    (
                        s.task_name.clone(),
                        json!({
                            "nonce": s.nonce,
                            "source": s.completion_source.map(|c| c.as_str()),
                            "completion_us": s.completion_us(),
                            "failure": s.failure,
                        }),
                    )
                })
                .collect();
            for (name, detail) in done {
                self.trace(node, "session_end", &name, detail);
            }
        }
        for a in actions {
            match a {
                AppAction::Send { delay_us, packet } => {
                    self.schedule(self.now + delay_us, EventKind::FromApp { node, packet })
                }
                AppAction::Timer { delay_us, timer } => {
                    self.schedule(self.now + delay_us, EventKind::DeviceTimer { node, timer })
                }
            }
        }
    }

    fn scratch_counts(&self) -> BTreeMap<String, u64> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.app {
                App::Edge(en) => Some((en.prefix().to_string(), en.counters.scratch_executions)),
                _ => None,
            })
            .collect()
    }

    fn rebalance(&mut self) -> Result<()> {
        let counts = self.scratch_counts();
        let load: BTreeMap<String, u64> = counts
            .iter()
            .map(|(en, c)| (en.clone(), c - self.last_scratch.get(en).copied().unwrap_or(0)))
            .collect();
        self.last_scratch = counts;
        let skew = self.config.rebalance.skew_factor;
        let updates: Vec<Assignment> = self
            .assignments
            .values()
            .filter_map(|a| {
                let window: BTreeMap<String, u64> = a
                    .ranges
                    .keys()
                    .map(|en| (en.clone(), load.get(en).copied().unwrap_or(0)))
                    .collect();
                rebalance(a, &window, skew)
            })
            .collect();
        for a in updates {
            self.apply_assignment(a)?;
        }
        // Keep ticking only while there is other work pending.
        if !self.queue.is_empty() {
            let next = self.now + ms_to_us(self.config.rebalance.window_ms);
            self.schedule(next, EventKind::Rebalance);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput> {
        let mut stuck = Vec::new();
        let mut sessions = Vec::new();
        for (info, node) in self.topo.nodes().iter().zip(&self.nodes) {
            match &node.app {
                App::Device(d) => {
                    for s in d.open_sessions() {
                        stuck.push(format!("{} nonce {} {} ({:?})", d.prefix(), s.nonce, s.task_name, s.state));
                    }
                    sessions.extend(d.sessions().cloned());
                    self.out.segments_served += d.segments_served;
                }
                App::Edge(en) => {
                    self.out.en_counters.insert(en.prefix().to_string(), en.counters);
                }
                App::None => {}
            }
            debug_assert_eq!(info.id, node.forwarder.node);
        }
        if !stuck.is_empty() {
            return Err(Error::Deadlock(stuck));
        }
        sessions.sort_by_key(|s| s.nonce);
        self.out.sessions = sessions;
        self.out.end_time = self.now;
        Ok(self.out)
    }
}

/// Independent RNG stream `n` of a run.
fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(n);
    r
}

/// Builds and runs one seed of an experiment.
pub fn run(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    Simulation::from_config(config, seed)?.run()
}
