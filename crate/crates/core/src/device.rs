//! User device: hashes inputs, offloads tasks, follows TTC replies with result
//! fetches, serves input pulls and accepts pushed results.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::edge_node::piecewise_linear;
use crate::error::{config_err, Result};
use crate::lsh::{FeatureVector, HashFamily};
use crate::names::{self, build_noreuse_name, build_task_name, parse_name, ParsedName, TaskParameters};
use crate::packet::{AppAction, Data, Interest, NodeId, Packet, Payload, ResultKind, SimTime, TaskResult};

const HASHING_TABLE_COUNTS: [f64; 3] = [1.0, 5.0, 10.0];
const HASHING_MS: [f64; 3] = [0.4, 1.7, 3.3];

/// Simulated cost of hashing one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashingDelay {
    Fixed { us: u64 },
    /// Measured hashing times by table count, interpolated between 1, 5 and 10 tables.
    Measured,
}

impl HashingDelay {
    pub fn charge_us(&self, num_tables: usize) -> u64 {
        match *self {
            HashingDelay::Fixed { us } => us,
            HashingDelay::Measured => {
                let ms = piecewise_linear(&HASHING_TABLE_COUNTS, &HASHING_MS, num_tables as f64, true);
                (ms * 1_000.0).round() as u64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum OffloadMode {
    /// Input travels in the task Interest; results are fetched after the TTC.
    Inline,
    /// The EN pulls the input in segments when it cannot reuse.
    Pull { input_size_bytes: u64 },
    /// Input travels in the task Interest; the EN pushes the result back.
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionSource {
    LocalCs,
    NetworkCs,
    PitAggregate,
    EnReuse,
    EnScratch,
}

impl CompletionSource {
    pub const ALL: [CompletionSource; 5] = [
        CompletionSource::LocalCs,
        CompletionSource::NetworkCs,
        CompletionSource::PitAggregate,
        CompletionSource::EnReuse,
        CompletionSource::EnScratch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompletionSource::LocalCs => "local_cs",
            CompletionSource::NetworkCs => "network_cs",
            CompletionSource::PitAggregate => "pit_aggregate",
            CompletionSource::EnReuse => "en_reuse",
            CompletionSource::EnScratch => "en_scratch",
        }
    }

    /// Every source except a fresh execution counts as reuse.
    pub fn is_reuse(self) -> bool {
        self != CompletionSource::EnScratch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Sent,
    AwaitingTtcWait,
    Fetching,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadSession {
    pub nonce: u64,
    pub task_name: String,
    pub service: String,
    pub start: SimTime,
    /// When the task Interest left the device, after hashing.
    pub sent_at: SimTime,
    pub state: SessionState,
    pub rtt_estimate_us: Option<u64>,
    /// EN that answered with a TTC; results are fetched from it.
    pub en_prefix: Option<String>,
    pub result: Option<TaskResult>,
    pub completion_source: Option<CompletionSource>,
    pub end: Option<SimTime>,
    pub threshold: f64,
    pub deadline_us: Option<u64>,
    /// Ground-truth label of the offloaded input.
    pub input_label: u32,
    pub push: bool,
    pub fetches: u32,
    pub failure: Option<String>,
}

impl OffloadSession {
    pub fn is_finished(&self) -> bool {
        matches!(self.state, SessionState::Done | SessionState::Failed)
    }

    pub fn completion_us(&self) -> Option<u64> {
        match self.state {
            SessionState::Done => self.end.map(|e| e - self.start),
            _ => None,
        }
    }

    pub fn missed_deadline(&self) -> bool {
        match (self.completion_us(), self.deadline_us) {
            (Some(c), Some(d)) => c > d,
            _ => false,
        }
    }

    /// Whether the result handed back matches what executing this input would give.
    pub fn result_correct(&self) -> Option<bool> {
        self.result.as_ref().map(|r| r.label == self.input_label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub prefix: String,
    pub node: NodeId,
    pub hashing: HashingDelay,
    pub reuse: bool,
    pub mode: OffloadMode,
    pub segment_size: u64,
    /// Sessions still open this long after starting are failed.
    pub session_timeout_us: Option<u64>,
}

impl DeviceConfig {
    pub fn new(prefix: &str, node: NodeId) -> Self {
        Self {
            prefix: names::normalize_prefix(prefix),
            node,
            hashing: HashingDelay::Measured,
            reuse: true,
            mode: OffloadMode::Inline,
            segment_size: crate::edge_node::DEFAULT_SEGMENT_SIZE,
            session_timeout_us: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DeviceTimer {
    Fetch { nonce: u64 },
    Timeout { nonce: u64 },
}

pub type DeviceAction = AppAction<DeviceTimer>;

#[derive(Debug)]
pub struct Device {
    pub config: DeviceConfig,
    family: Arc<HashFamily>,
    sessions: BTreeMap<u64, OffloadSession>,
    /// Sessions waiting on a Data packet, by the name they expect.
    waiting: BTreeMap<String, Vec<u64>>,
    /// Sessions waiting for a pushed result, by offload name.
    waiting_push: BTreeMap<String, Vec<u64>>,
    aggregated: BTreeSet<u64>,
    /// Serialized inputs available for pulling, by (service, hash).
    inputs: BTreeMap<(String, String), Vec<u8>>,
    finished: Vec<u64>,
    pub segments_served: u64,
}

fn send_interest(delay_us: u64, interest: Interest) -> DeviceAction {
    AppAction::Send {
        delay_us,
        packet: Packet::Interest(interest),
    }
}

fn send_data(name: &str, payload: Payload) -> DeviceAction {
    AppAction::Send {
        delay_us: 0,
        packet: Packet::Data(Data::new(name, payload)),
    }
}

impl Device {
    pub fn new(config: DeviceConfig, family: Arc<HashFamily>) -> Result<Self> {
        if config.segment_size == 0 {
            return Err(config_err("segment size must be positive"));
        }
        if let OffloadMode::Pull { input_size_bytes: 0 } = config.mode {
            return Err(config_err("pulled inputs need a positive input size"));
        }
        Ok(Self {
            config,
            family,
            sessions: BTreeMap::new(),
            waiting: BTreeMap::new(),
            waiting_push: BTreeMap::new(),
            aggregated: BTreeSet::new(),
            inputs: BTreeMap::new(),
            finished: Vec::new(),
            segments_served: 0,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.config.prefix
    }

    pub fn session(&self, nonce: u64) -> Option<&OffloadSession> {
        self.sessions.get(&nonce)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &OffloadSession> {
        self.sessions.values()
    }

    pub fn open_sessions(&self) -> impl Iterator<Item = &OffloadSession> {
        self.sessions.values().filter(|s| !s.is_finished())
    }

    /// Records that the task Interest of `nonce` was absorbed by an existing PIT entry.
    pub fn mark_aggregated(&mut self, nonce: u64) {
        self.aggregated.insert(nonce);
    }

    /// Sessions that completed or failed since the last call.
    pub fn take_finished(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.finished)
    }

    pub fn hashing_charge_us(&self) -> u64 {
        if self.config.reuse {
            self.config.hashing.charge_us(self.family.config().num_tables)
        } else {
            0
        }
    }

    pub fn offload(
        &mut self,
        nonce: u64,
        service: &str,
        input: FeatureVector,
        threshold: f64,
        deadline_us: Option<u64>,
        now: SimTime,
    ) -> Result<Vec<DeviceAction>> {
        let name = if self.config.reuse {
            build_task_name(service, &self.family.hash_vector(&input)?, true)?
        } else {
            build_noreuse_name(service, &input)?
        };
        let mut params = match self.config.mode {
            OffloadMode::Inline => TaskParameters::inline(input.clone(), threshold),
            OffloadMode::Push => TaskParameters::pushed(input.clone(), &self.config.prefix, threshold),
            OffloadMode::Pull { input_size_bytes } => {
                let mut bytes = input.to_bytes();
                let size = input_size_bytes.max(bytes.len() as u64);
                bytes.resize(size as usize, 0);
                self.inputs
                    .insert((service.to_string(), name.hash_hex.clone()), bytes);
                TaskParameters::pulled(size, &self.config.prefix, threshold)
            }
        };
        params.deadline_us = deadline_us;
        params.validate()?;

        let charge = self.hashing_charge_us();
        let task_name = name.to_string();
        self.sessions.insert(
            nonce,
            OffloadSession {
                nonce,
                task_name: task_name.clone(),
                service: service.to_string(),
                start: now,
                sent_at: now + charge,
                state: SessionState::Sent,
                rtt_estimate_us: None,
                en_prefix: None,
                result: None,
                completion_source: None,
                end: None,
                threshold,
                deadline_us,
                input_label: input.label,
                push: self.config.mode == OffloadMode::Push,
                fetches: 0,
                failure: None,
            },
        );
        self.waiting.entry(task_name.clone()).or_default().push(nonce);
        let mut actions = vec![send_interest(charge, Interest::new(task_name, nonce).with_params(params))];
        if let Some(t) = self.config.session_timeout_us {
            actions.push(AppAction::Timer {
                delay_us: t,
                timer: DeviceTimer::Timeout { nonce },
            });
        }
        Ok(actions)
    }

    fn classify(&self, nonce: u64, data: Option<&Data>, result: &TaskResult) -> CompletionSource {
        match data.and_then(|d| d.served_from_cs) {
            Some(node) if node == self.config.node => CompletionSource::LocalCs,
            Some(_) => CompletionSource::NetworkCs,
            None if self.aggregated.contains(&nonce) => CompletionSource::PitAggregate,
            None if result.kind == ResultKind::Executed && result.executed_for == nonce => {
                CompletionSource::EnScratch
            }
            None => CompletionSource::EnReuse,
        }
    }

    fn complete(&mut self, nonce: u64, data: Option<&Data>, result: TaskResult, now: SimTime) {
        let source = self.classify(nonce, data, &result);
        let s = self.sessions.get_mut(&nonce).expect("known session");
        debug_assert!(!s.is_finished(), "session {nonce} completed twice");
        s.state = SessionState::Done;
        s.completion_source = Some(source);
        s.result = Some(result);
        s.end = Some(now);
        self.finished.push(nonce);
    }

    fn fail(&mut self, nonce: u64, reason: String, now: SimTime) {
        if let Some(s) = self.sessions.get_mut(&nonce) {
            if !s.is_finished() {
                s.state = SessionState::Failed;
                s.failure = Some(reason);
                s.end = Some(now);
                self.finished.push(nonce);
            }
        }
    }

    pub fn handle_data(&mut self, data: Data, now: SimTime) -> Vec<DeviceAction> {
        let Some(nonces) = self.waiting.remove(&data.name) else {
            return Vec::new();
        };
        let mut actions = Vec::new();
        for nonce in nonces {
            let Some(session) = self.sessions.get(&nonce) else { continue };
            if session.is_finished() {
                continue;
            }
            match &data.payload {
                Payload::Result(r) => self.complete(nonce, Some(&data), r.clone(), now),
                Payload::Ttc { ttc_us, en_prefix } => actions.extend(self.on_ttc_response(nonce, *ttc_us, en_prefix, now)),
                Payload::Negative { reason } => self.fail(nonce, reason.clone(), now),
                other => self.fail(nonce, format!("unexpected {} reply", other.kind()), now),
            }
        }
        actions
    }

    /// Schedules the result fetch `ttc − rtt` from now; RTT is measured on the
    /// first task/TTC exchange only. A push session whose Interest was
    /// aggregated never reached the EN, so nothing will be pushed to it and it
    /// fetches like an inline one.
    pub fn on_ttc_response(&mut self, nonce: u64, ttc_us: u64, en_prefix: &str, now: SimTime) -> Vec<DeviceAction> {
        let s = self.sessions.get_mut(&nonce).expect("known session");
        let rtt = *s.rtt_estimate_us.get_or_insert(now.saturating_sub(s.sent_at));
        s.en_prefix = Some(en_prefix.to_string());
        if s.push && !self.aggregated.contains(&nonce) {
            s.state = SessionState::AwaitingTtcWait;
            self.waiting_push.entry(s.task_name.clone()).or_default().push(nonce);
            return Vec::new();
        }
        s.state = SessionState::AwaitingTtcWait;
        vec![AppAction::Timer {
            delay_us: ttc_us.saturating_sub(rtt),
            timer: DeviceTimer::Fetch { nonce },
        }]
    }

    pub fn handle_timer(&mut self, timer: DeviceTimer, now: SimTime) -> Vec<DeviceAction> {
        match timer {
            DeviceTimer::Fetch { nonce } => self.send_fetch(nonce),
            DeviceTimer::Timeout { nonce } => {
                self.fail(nonce, "session timed out".into(), now);
                Vec::new()
            }
        }
    }

    fn send_fetch(&mut self, nonce: u64) -> Vec<DeviceAction> {
        let Some(s) = self.sessions.get_mut(&nonce) else {
            return Vec::new();
        };
        if s.is_finished() {
            return Vec::new();
        }
        let Some(en_prefix) = s.en_prefix.clone() else {
            return Vec::new();
        };
        let Ok(ParsedName::Task(task)) = parse_name(&s.task_name) else {
            return Vec::new();
        };
        let fetch = task.with_en_prefix(&en_prefix).to_string();
        s.state = SessionState::Fetching;
        s.fetches += 1;
        self.waiting.entry(fetch.clone()).or_default().push(nonce);
        vec![send_interest(0, Interest::new(fetch, nonce))]
    }

    /// Answers input pulls and pushed results addressed to this device.
    pub fn handle_interest(&mut self, interest: Interest, now: SimTime) -> Vec<DeviceAction> {
        let comps = names::components(&interest.name);
        let own = names::components(&self.config.prefix);
        if !names::is_prefix_of(&self.config.prefix, &interest.name) {
            return vec![send_data(&interest.name, Payload::Negative { reason: "not for this device".into() })];
        }
        match &comps[own.len()..] {
            [service, "input", hash, seg] => self.serve_input_segment(&interest.name, service, hash, seg),
            [service, "result", hash] => {
                let offload = format!("/{service}/{}/{hash}", names::TASK_KEYWORD);
                let noreuse = format!("/{service}/{}/{hash}", names::NOREUSE_KEYWORD);
                let result = match &interest.payload {
                    Some(Payload::Result(r)) => r.clone(),
                    _ => {
                        return vec![send_data(&interest.name, Payload::Negative { reason: "push carries no result".into() })]
                    }
                };
                let nonces: Vec<u64> = [offload, noreuse]
                    .iter()
                    .filter_map(|n| self.waiting_push.remove(n))
                    .flatten()
                    .collect();
                for nonce in nonces {
                    if self.sessions.get(&nonce).is_some_and(|s| !s.is_finished()) {
                        self.complete(nonce, None, result.clone(), now);
                    }
                }
                vec![send_data(&interest.name, Payload::Ack)]
            }
            _ => vec![send_data(&interest.name, Payload::Negative { reason: "unknown request".into() })],
        }
    }

    pub fn serve_input_segment(&mut self, name: &str, service: &str, hash: &str, seg: &str) -> Vec<DeviceAction> {
        let Some(bytes) = self.inputs.get(&(service.to_string(), hash.to_string())) else {
            return vec![send_data(name, Payload::Negative { reason: format!("no input with hash {hash}") })];
        };
        let size = self.config.segment_size as usize;
        let total = bytes.len().div_ceil(size);
        match seg.parse::<usize>() {
            Ok(i) if i < total => {
                self.segments_served += 1;
                let chunk = bytes[i * size..((i + 1) * size).min(bytes.len())].to_vec();
                vec![send_data(
                    name,
                    Payload::InputSegment {
                        segment: i as u32,
                        total: total as u32,
                        bytes: chunk,
                    },
                )]
            }
            _ => vec![send_data(name, Payload::Negative { reason: format!("segment {seg} out of range") })],
        }
    }
}
