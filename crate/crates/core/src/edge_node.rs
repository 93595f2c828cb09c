//! Edge node application: multi-table reuse store, threshold-gated reuse,
//! execution from scratch with TTC estimates, input pulling and result pushing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::lsh::{
    decode_hash, dot, probe_set, ConcatenatedHash, FeatureVector, HashFamilyConfig,
};
use crate::names::{self, parse_name, ParsedName, TaskName, TaskParameters};
use crate::packet::{AppAction, Data, Interest, Packet, Payload, ResultKind, SimTime, TaskResult};

pub const DEFAULT_EWMA_ALPHA: f64 = 0.125;
pub const DEFAULT_SEGMENT_SIZE: u64 = 8 * 1024;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_INITIAL_RTT_US: u64 = 50_000;

const SEARCH_STORE_SIZES: [f64; 5] = [20_000.0, 40_000.0, 60_000.0, 80_000.0, 100_000.0];
const SEARCH_TABLE_COUNTS: [f64; 3] = [1.0, 5.0, 10.0];
/// Nearest-neighbour search time (ms); rows follow `SEARCH_STORE_SIZES`, columns `SEARCH_TABLE_COUNTS`.
const SEARCH_MS: [[f64; 3]; 5] = [
    [0.09, 1.08, 1.43],
    [0.10, 1.70, 2.21],
    [0.11, 2.62, 3.05],
    [0.13, 3.25, 3.61],
    [0.22, 3.92, 4.40],
];

/// Piecewise-linear interpolation over ascending `xs`. Below the first knot the
/// first value is used; past the last knot the final segment is extended when
/// `extrapolate` is set, otherwise clamped.
pub(crate) fn piecewise_linear(xs: &[f64], ys: &[f64], x: f64, extrapolate: bool) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    let seg = (1..n).find(|&i| x <= xs[i]).unwrap_or(n - 1);
    if x > xs[n - 1] && !extrapolate {
        return ys[n - 1];
    }
    let (x0, x1, y0, y1) = (xs[seg - 1], xs[seg], ys[seg - 1], ys[seg]);
    (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).max(0.0)
}

/// Simulated cost of one nearest-neighbour search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDelay {
    Fixed { us: u64 },
    /// Looked up from the measured search-time table by table count and store size.
    Measured,
}

impl SearchDelay {
    pub fn charge_us(&self, num_tables: usize, stored: usize) -> u64 {
        match *self {
            SearchDelay::Fixed { us } => us,
            SearchDelay::Measured => {
                let per_row: Vec<f64> = SEARCH_MS
                    .iter()
                    .map(|row| piecewise_linear(&SEARCH_TABLE_COUNTS, row, num_tables as f64, true))
                    .collect();
                let ms = piecewise_linear(&SEARCH_STORE_SIZES, &per_row, stored as f64, false);
                (ms * 1_000.0).round() as u64
            }
        }
    }
}

/// Execution time of one service, drawn uniformly from `[min_us, max_us]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecModel {
    pub min_us: u64,
    pub max_us: u64,
    /// TTC reported before any execution has been observed.
    pub nominal_us: u64,
}

impl ExecModel {
    pub fn validate(&self, service: &str) -> Result<()> {
        if self.min_us > self.max_us {
            return Err(config_err(format!(
                "service {service}: execution range [{}, {}] is empty",
                self.min_us, self.max_us
            )));
        }
        if self.nominal_us == 0 {
            return Err(config_err(format!("service {service}: nominal execution time must be positive")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        rng.random_range(self.min_us..=self.max_us)
    }
}

impl Default for ExecModel {
    fn default() -> Self {
        Self {
            min_us: 70_000,
            max_us: 100_000,
            nominal_us: 85_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTask {
    pub id: u64,
    pub service: String,
    pub input: Arc<FeatureVector>,
    /// Cached `input.norm()`.
    pub norm: f64,
    pub hash: ConcatenatedHash,
    /// Execution result, which is the label of the executed input.
    pub label: u32,
    pub executed_for: u64,
    pub stored_at: SimTime,
}

#[derive(Debug)]
struct ServiceStore {
    tables: Vec<HashMap<u32, Vec<u64>>>,
    tasks: LruCache<u64, StoredTask>,
}

impl ServiceStore {
    fn unlink(&mut self, task: &StoredTask) {
        for (t, idx) in task.hash.indices.iter().enumerate() {
            if let Some(bucket) = self.tables[t].get_mut(idx) {
                bucket.retain(|&id| id != task.id);
                if bucket.is_empty() {
                    self.tables[t].remove(idx);
                }
            }
        }
    }
}

/// Per-service LSH tables over executed tasks, with a global LRU per service.
#[derive(Debug)]
pub struct ReuseStore {
    family: HashFamilyConfig,
    capacity: usize,
    services: BTreeMap<String, ServiceStore>,
    next_id: u64,
}

impl ReuseStore {
    /// `capacity` is the number of tasks kept per service; 0 disables storing.
    pub fn new(family: HashFamilyConfig, capacity: usize) -> Self {
        Self {
            family,
            capacity,
            services: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn family(&self) -> &HashFamilyConfig {
        &self.family
    }

    pub fn len(&self, service: &str) -> usize {
        self.services.get(service).map_or(0, |s| s.tasks.len())
    }

    pub fn total_len(&self) -> usize {
        self.services.values().map(|s| s.tasks.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Stores an executed task in its own bucket of every table. Returns the new
    /// task id (none when storing is disabled) and the task evicted to make room.
    pub fn insert(
        &mut self,
        service: &str,
        input: Arc<FeatureVector>,
        hash: ConcatenatedHash,
        executed_for: u64,
        now: SimTime,
    ) -> (Option<u64>, Option<StoredTask>) {
        let Some(cap) = NonZeroUsize::new(self.capacity) else {
            return (None, None);
        };
        assert_eq!(hash.num_tables(), self.family.num_tables, "hash width mismatch");
        let tables = self.family.num_tables;
        let store = self
            .services
            .entry(service.to_string())
            .or_insert_with(|| ServiceStore {
                tables: vec![HashMap::new(); tables],
                tasks: LruCache::new(cap),
            });
        let id = self.next_id;
        self.next_id += 1;
        for (t, idx) in hash.indices.iter().enumerate() {
            store.tables[t].entry(*idx).or_default().push(id);
        }
        let task = StoredTask {
            id,
            service: service.to_string(),
            label: input.label,
            norm: input.norm(),
            input,
            hash,
            executed_for,
            stored_at: now,
        };
        let evicted = store.tasks.push(id, task).map(|(_, old)| old);
        if let Some(old) = &evicted {
            store.unlink(old);
        }
        (Some(id), evicted)
    }

    /// Best candidate over the probed buckets of every table, without a threshold
    /// and without touching recency. Ties go to the most recently stored task.
    pub fn nearest(
        &self,
        service: &str,
        input: &FeatureVector,
        hash: &ConcatenatedHash,
        probe_radius: u32,
    ) -> Option<(u64, f64)> {
        let store = self.services.get(service)?;
        let query_norm = input.norm();
        if query_norm == 0.0 {
            return None;
        }
        let mut seen = HashSet::new();
        let mut best: Option<(u64, f64)> = None;
        for b in hash.buckets() {
            for probe in probe_set(b, probe_radius, self.family.bits_per_table) {
                let Some(bucket) = store.tables[probe.table].get(&probe.index) else {
                    continue;
                };
                for &id in bucket {
                    if !seen.insert(id) {
                        continue;
                    }
                    let task = store.tasks.peek(&id).expect("bucket references stored task");
                    if task.norm == 0.0 || task.input.dimension() != input.dimension() {
                        continue;
                    }
                    let sim = (dot(&task.input.values, &input.values) / (task.norm * query_norm)).clamp(-1.0, 1.0);
                    let better = match best {
                        None => true,
                        Some((bid, bsim)) => sim > bsim || (sim == bsim && id > bid),
                    };
                    if better {
                        best = Some((id, sim));
                    }
                }
            }
        }
        best
    }

    /// Marks a task as used; returns a copy of it.
    pub fn touch(&mut self, service: &str, id: u64) -> Option<StoredTask> {
        self.services.get_mut(service)?.tasks.get(&id).cloned()
    }

    pub fn get(&self, service: &str, id: u64) -> Option<&StoredTask> {
        self.services.get(service)?.tasks.peek(&id)
    }

    /// Stored tasks of a service, least recently used first.
    pub fn tasks(&self, service: &str) -> Vec<&StoredTask> {
        self.services
            .get(service)
            .map(|s| s.tasks.iter().rev().map(|(_, t)| t).collect())
            .unwrap_or_default()
    }

    /// Number of table slots that reference `id`.
    pub fn slot_count(&self, service: &str, id: u64) -> usize {
        self.services.get(service).map_or(0, |s| {
            s.tables
                .iter()
                .map(|table| table.values().filter(|b| b.contains(&id)).count())
                .sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ewma {
    pub value_us: f64,
    pub samples: u64,
}

/// Per-service execution-time statistics used for TTC estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceStats {
    alpha: f64,
    nominal_us: BTreeMap<String, u64>,
    ewma: BTreeMap<String, Ewma>,
}

impl ServiceStats {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            nominal_us: BTreeMap::new(),
            ewma: BTreeMap::new(),
        }
    }

    pub fn set_nominal(&mut self, service: &str, nominal_us: u64) {
        self.nominal_us.insert(service.to_string(), nominal_us);
    }

    pub fn observe(&mut self, service: &str, duration_us: u64) {
        let sample = duration_us as f64;
        let alpha = self.alpha;
        self.ewma
            .entry(service.to_string())
            .and_modify(|e| {
                e.value_us += alpha * (sample - e.value_us);
                e.samples += 1;
            })
            .or_insert(Ewma {
                value_us: sample,
                samples: 1,
            });
    }

    pub fn get(&self, service: &str) -> Option<Ewma> {
        self.ewma.get(service).copied()
    }

    pub fn estimate_ttc(&self, service: &str) -> u64 {
        match self.ewma.get(service) {
            Some(e) => e.value_us.round() as u64,
            None => self.nominal_us.get(service).copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeNodeConfig {
    pub prefix: String,
    pub services: BTreeMap<String, ExecModel>,
    pub store_capacity: usize,
    pub probe_radius: u32,
    pub search_delay: SearchDelay,
    pub ewma_alpha: f64,
    pub segment_size: u64,
    pub max_retries: u32,
    /// RTT assumed towards a device before any pull has been measured.
    pub initial_rtt_us: u64,
}

impl EdgeNodeConfig {
    pub fn new(prefix: &str, services: BTreeMap<String, ExecModel>) -> Self {
        Self {
            prefix: names::normalize_prefix(prefix),
            services,
            store_capacity: 10_000,
            probe_radius: crate::lsh::DEFAULT_PROBE_RADIUS,
            search_delay: SearchDelay::Measured,
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            segment_size: DEFAULT_SEGMENT_SIZE,
            max_retries: DEFAULT_MAX_RETRIES,
            initial_rtt_us: DEFAULT_INITIAL_RTT_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum EnTimer {
    ExecDone { key: String, generation: u64 },
    PullTimeout { key: String, segment: u32, attempt: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalOutcome {
    Reused,
    Scratch,
    /// Attached to an execution of the same name that was already running.
    Joined,
}

/// A task reaching its decision point at an EN.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskArrival {
    pub time: SimTime,
    pub en: String,
    pub nonce: u64,
    pub service: String,
    pub threshold: f64,
    pub input: Arc<FeatureVector>,
    /// LSH hash for reuse tasks.
    pub hash: Option<ConcatenatedHash>,
    pub outcome: ArrivalOutcome,
    pub reused_id: Option<u64>,
    /// Best probed candidate regardless of threshold.
    pub probed_best: Option<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnRecord {
    Arrival(TaskArrival),
    StoreInsert {
        time: SimTime,
        en: String,
        service: String,
        id: u64,
        input: Arc<FeatureVector>,
        hash: ConcatenatedHash,
    },
    StoreEvict {
        time: SimTime,
        en: String,
        service: String,
        id: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnCounters {
    pub tasks_received: u64,
    pub reuse_hits: u64,
    pub scratch_executions: u64,
    pub inflight_joins: u64,
    pub evictions: u64,
    pub pull_interests: u64,
    pub failed: u64,
}

#[derive(Debug, Clone)]
struct Request {
    key: String,
    task: TaskName,
    params: TaskParameters,
    nonce: u64,
}

#[derive(Debug)]
struct PullState {
    request: Request,
    device_prefix: String,
    segments: Vec<Option<Vec<u8>>>,
    attempts: Vec<u32>,
    sent_at: Vec<SimTime>,
}

#[derive(Debug)]
enum TaskState {
    Pulling(PullState),
    Executing {
        task: TaskName,
        input: Arc<FeatureVector>,
        nonce: u64,
        started_at: SimTime,
        ready_at: SimTime,
        generation: u64,
        push_to: Vec<String>,
    },
    Ready(TaskResult),
}

pub type EnAction = AppAction<EnTimer>;

fn reply(delay_us: u64, name: &str, payload: Payload) -> EnAction {
    AppAction::Send {
        delay_us,
        packet: Packet::Data(Data::new(name, payload)),
    }
}

fn negative(name: &str, reason: impl Into<String>) -> EnAction {
    reply(0, name, Payload::Negative { reason: reason.into() })
}

pub fn segment_name(device_prefix: &str, service: &str, hash_hex: &str, segment: u32) -> String {
    format!("{}/{service}/input/{hash_hex}/{segment}", names::normalize_prefix(device_prefix))
}

pub fn push_name(device_prefix: &str, service: &str, hash_hex: &str) -> String {
    format!("{}/{service}/result/{hash_hex}", names::normalize_prefix(device_prefix))
}

#[derive(Debug)]
pub struct EdgeNode {
    pub config: EdgeNodeConfig,
    pub store: ReuseStore,
    pub stats: ServiceStats,
    pub counters: EnCounters,
    family: HashFamilyConfig,
    tasks: BTreeMap<String, TaskState>,
    segment_owner: HashMap<String, (String, u32)>,
    rtt_estimates: BTreeMap<String, u64>,
    next_generation: u64,
    records: Vec<EnRecord>,
}

impl EdgeNode {
    pub fn new(config: EdgeNodeConfig, family: HashFamilyConfig) -> Result<Self> {
        family.validate()?;
        for (name, model) in &config.services {
            model.validate(name)?;
        }
        if config.segment_size == 0 {
            return Err(config_err("segment size must be positive"));
        }
        if !(config.ewma_alpha > 0.0 && config.ewma_alpha <= 1.0) {
            return Err(config_err(format!("EWMA factor {} outside (0, 1]", config.ewma_alpha)));
        }
        let mut stats = ServiceStats::new(config.ewma_alpha);
        for (name, model) in &config.services {
            stats.set_nominal(name, model.nominal_us);
        }
        Ok(Self {
            store: ReuseStore::new(family, config.store_capacity),
            stats,
            counters: EnCounters::default(),
            family,
            tasks: BTreeMap::new(),
            segment_owner: HashMap::new(),
            rtt_estimates: BTreeMap::new(),
            next_generation: 0,
            records: Vec::new(),
            config,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.config.prefix
    }

    pub fn offers(&self, service: &str) -> bool {
        self.config.services.contains_key(service)
    }

    pub fn take_records(&mut self) -> Vec<EnRecord> {
        std::mem::take(&mut self.records)
    }

    /// Threshold-gated nearest neighbour among the probed buckets. A hit refreshes
    /// the task's recency.
    pub fn find_reusable(
        &mut self,
        service: &str,
        input: &FeatureVector,
        hash: &ConcatenatedHash,
        threshold: f64,
    ) -> Result<Option<(StoredTask, f64)>> {
        if !self.offers(service) {
            return Err(Error::ServiceUnknown(service.to_string()));
        }
        let hit = self
            .store
            .nearest(service, input, hash, self.config.probe_radius)
            .filter(|&(_, sim)| sim >= threshold);
        Ok(hit.and_then(|(id, sim)| self.store.touch(service, id).map(|t| (t, sim))))
    }

    pub fn handle_interest(&mut self, interest: Interest, now: SimTime, rng: &mut impl Rng) -> Vec<EnAction> {
        match parse_name(&interest.name) {
            Ok(ParsedName::Task(t)) if t.is_result_fetch() => vec![self.handle_result_fetch(&interest.name, &t, now)],
            Ok(ParsedName::Task(t)) => self.handle_task(interest, t, now, rng),
            _ => vec![negative(&interest.name, "not a task name")],
        }
    }

    fn handle_task(&mut self, interest: Interest, task: TaskName, now: SimTime, rng: &mut impl Rng) -> Vec<EnAction> {
        self.counters.tasks_received += 1;
        if !self.offers(&task.service) {
            return vec![negative(&interest.name, Error::ServiceUnknown(task.service).to_string())];
        }
        let params = match interest.params {
            Some(p) => match p.validate() {
                Ok(()) => p,
                Err(e) => return vec![negative(&interest.name, e.to_string())],
            },
            None => return vec![negative(&interest.name, "task carries no parameters")],
        };
        let key = interest.name.clone();
        if matches!(self.tasks.get(&key), Some(TaskState::Pulling(_))) {
            // Duplicate of a task whose input is still being pulled; the PIT
            // entry upstream already covers it.
            return Vec::new();
        }
        let request = Request {
            key,
            task,
            nonce: interest.nonce,
            params,
        };
        match request.params.inline_input.clone() {
            Some(input) => self.decide(request, Arc::new(input), now, rng),
            None => self.start_pull(request, now),
        }
    }

    /// Reuse, join, or execute from scratch once the input is available.
    fn decide(&mut self, req: Request, input: Arc<FeatureVector>, now: SimTime, rng: &mut impl Rng) -> Vec<EnAction> {
        let service = req.task.service.clone();
        let threshold = req.params.similarity_threshold;
        let mut search_us = 0;
        let mut hash = None;
        let mut probed_best = None;
        if req.task.is_reuse() {
            let h = match decode_hash(&req.task.hash_hex, self.family.index_size_bytes, self.family.num_tables)
                .and_then(|h| h.check_bits(self.family.bits_per_table).map(|_| h))
            {
                Ok(h) => h,
                Err(e) => return vec![negative(&req.key, e.to_string())],
            };
            search_us = self
                .config
                .search_delay
                .charge_us(self.family.num_tables, self.store.len(&service));
            probed_best = self.store.nearest(&service, &input, &h, self.config.probe_radius);
            hash = Some(h);
        }
        let arrival = |outcome, reused_id| TaskArrival {
            time: now,
            en: self.config.prefix.clone(),
            nonce: req.nonce,
            service: service.clone(),
            threshold,
            input: input.clone(),
            hash: hash.clone(),
            outcome,
            reused_id,
            probed_best,
        };

        if let Some((id, sim)) = probed_best.filter(|&(_, sim)| sim >= threshold) {
            let stored = self.store.touch(&service, id).expect("probed task is stored");
            self.counters.reuse_hits += 1;
            self.records.push(EnRecord::Arrival(arrival(ArrivalOutcome::Reused, Some(id))));
            let result = TaskResult {
                label: stored.label,
                kind: ResultKind::Reused,
                executed_for: stored.executed_for,
                similarity: Some(sim),
                en_prefix: self.config.prefix.clone(),
            };
            return vec![reply(search_us, &req.key, Payload::Result(result))];
        }

        if let Some(TaskState::Executing { ready_at, push_to, .. }) = self.tasks.get_mut(&req.key) {
            let remaining = ready_at.saturating_sub(now + search_us);
            if req.params.push_result {
                push_to.extend(req.params.device_prefix.clone());
            }
            self.counters.inflight_joins += 1;
            self.records.push(EnRecord::Arrival(arrival(ArrivalOutcome::Joined, None)));
            let ttc = Payload::Ttc {
                ttc_us: remaining,
                en_prefix: self.config.prefix.clone(),
            };
            return vec![reply(search_us, &req.key, ttc)];
        }

        self.counters.scratch_executions += 1;
        self.records.push(EnRecord::Arrival(arrival(ArrivalOutcome::Scratch, None)));
        let exec_us = self.config.services[&service].sample(rng);
        self.next_generation += 1;
        let generation = self.next_generation;
        let started_at = now + search_us;
        let ttc = Payload::Ttc {
            ttc_us: self.stats.estimate_ttc(&service),
            en_prefix: self.config.prefix.clone(),
        };
        let push_to = if req.params.push_result {
            req.params.device_prefix.clone().into_iter().collect()
        } else {
            Vec::new()
        };
        self.tasks.insert(
            req.key.clone(),
            TaskState::Executing {
                task: req.task,
                input,
                nonce: req.nonce,
                started_at,
                ready_at: started_at + exec_us,
                generation,
                push_to,
            },
        );
        vec![
            reply(search_us, &req.key, ttc),
            AppAction::Timer {
                delay_us: search_us + exec_us,
                timer: EnTimer::ExecDone { key: req.key, generation },
            },
        ]
    }

    fn handle_result_fetch(&mut self, name: &str, task: &TaskName, now: SimTime) -> EnAction {
        let key = task.without_en_prefix().to_string();
        match self.tasks.get(&key) {
            Some(TaskState::Ready(result)) => reply(0, name, Payload::Result(result.clone())),
            Some(TaskState::Executing { ready_at, .. }) => reply(
                0,
                name,
                Payload::Ttc {
                    ttc_us: ready_at.saturating_sub(now),
                    en_prefix: self.config.prefix.clone(),
                },
            ),
            Some(TaskState::Pulling(_)) => reply(
                0,
                name,
                Payload::Ttc {
                    ttc_us: self.stats.estimate_ttc(&task.service),
                    en_prefix: self.config.prefix.clone(),
                },
            ),
            None => negative(name, format!("unknown task {key}")),
        }
    }

    fn pull_timeout_us(&self, device_prefix: &str) -> u64 {
        2 * self
            .rtt_estimates
            .get(device_prefix)
            .copied()
            .unwrap_or(self.config.initial_rtt_us)
    }

    fn send_segment(&mut self, key: &str, name: String, segment: u32, attempt: u32, nonce: u64, device: &str) -> [EnAction; 2] {
        self.counters.pull_interests += 1;
        let mut interest = Interest::new(name, nonce);
        interest.retransmission = attempt > 0;
        [
            AppAction::Send {
                delay_us: 0,
                packet: Packet::Interest(interest),
            },
            AppAction::Timer {
                delay_us: self.pull_timeout_us(device),
                timer: EnTimer::PullTimeout {
                    key: key.to_string(),
                    segment,
                    attempt,
                },
            },
        ]
    }

    fn start_pull(&mut self, req: Request, now: SimTime) -> Vec<EnAction> {
        let size = req.params.input_size_bytes.unwrap_or(0);
        let device = req.params.device_prefix.clone().unwrap_or_default();
        if size == 0 {
            return vec![negative(&req.key, config_err("declared input size is 0").to_string())];
        }
        let total = size.div_ceil(self.config.segment_size) as u32;
        let mut actions = Vec::with_capacity(2 * total as usize);
        for seg in 0..total {
            let name = segment_name(&device, &req.task.service, &req.task.hash_hex, seg);
            self.segment_owner.insert(name.clone(), (req.key.clone(), seg));
            actions.extend(self.send_segment(&req.key, name, seg, 0, req.nonce, &device));
        }
        self.tasks.insert(
            req.key.clone(),
            TaskState::Pulling(PullState {
                request: req,
                device_prefix: device,
                segments: vec![None; total as usize],
                attempts: vec![0; total as usize],
                sent_at: vec![now; total as usize],
            }),
        );
        actions
    }

    fn fail_pull(&mut self, key: &str, reason: String) -> Vec<EnAction> {
        if let Some(TaskState::Pulling(p)) = self.tasks.remove(key) {
            for seg in 0..p.segments.len() as u32 {
                let name = segment_name(&p.device_prefix, &p.request.task.service, &p.request.task.hash_hex, seg);
                self.segment_owner.remove(&name);
            }
        }
        self.counters.failed += 1;
        vec![negative(key, reason)]
    }

    pub fn handle_data(&mut self, data: Data, now: SimTime, rng: &mut impl Rng) -> Vec<EnAction> {
        let Some((key, seg)) = self.segment_owner.remove(&data.name) else {
            return Vec::new();
        };
        let bytes = match data.payload {
            Payload::InputSegment { bytes, .. } => bytes,
            Payload::Negative { reason } => return self.fail_pull(&key, format!("input pull refused: {reason}")),
            other => return self.fail_pull(&key, format!("unexpected {} reply to input pull", other.kind())),
        };
        let Some(TaskState::Pulling(pull)) = self.tasks.get_mut(&key) else {
            return Vec::new();
        };
        let i = seg as usize;
        if pull.attempts[i] == 0 {
            let sample = now.saturating_sub(pull.sent_at[i]);
            self.rtt_estimates.insert(pull.device_prefix.clone(), sample.max(1));
        }
        pull.segments[i] = Some(bytes);
        if pull.segments.iter().any(Option::is_none) {
            return Vec::new();
        }
        let Some(TaskState::Pulling(pull)) = self.tasks.remove(&key) else {
            unreachable!()
        };
        let bytes: Vec<u8> = pull.segments.into_iter().flatten().flatten().collect();
        match FeatureVector::from_bytes(&bytes) {
            Ok(input) => self.decide(pull.request, Arc::new(input), now, rng),
            Err(e) => {
                self.counters.failed += 1;
                vec![negative(&key, e.to_string())]
            }
        }
    }

    pub fn handle_timer(&mut self, timer: EnTimer, now: SimTime) -> Vec<EnAction> {
        match timer {
            EnTimer::ExecDone { key, generation } => self.finish_execution(&key, generation, now),
            EnTimer::PullTimeout { key, segment, attempt } => {
                let Some(TaskState::Pulling(pull)) = self.tasks.get_mut(&key) else {
                    return Vec::new();
                };
                let i = segment as usize;
                if pull.segments[i].is_some() || pull.attempts[i] != attempt {
                    return Vec::new();
                }
                if attempt >= self.config.max_retries {
                    return self.fail_pull(&key, format!("input segment {segment} timed out"));
                }
                pull.attempts[i] += 1;
                pull.sent_at[i] = now;
                let (nonce, device) = (pull.request.nonce, pull.device_prefix.clone());
                let name = segment_name(&device, &pull.request.task.service, &pull.request.task.hash_hex, segment);
                self.send_segment(&key, name, segment, attempt + 1, nonce, &device).into()
            }
        }
    }

    fn finish_execution(&mut self, key: &str, generation: u64, now: SimTime) -> Vec<EnAction> {
        let Some(TaskState::Executing { generation: g, .. }) = self.tasks.get(key) else {
            return Vec::new();
        };
        if *g != generation {
            return Vec::new();
        }
        let Some(TaskState::Executing { task, input, nonce, started_at, push_to, .. }) = self.tasks.remove(key) else {
            unreachable!()
        };
        self.stats.observe(&task.service, now - started_at);
        if task.is_reuse() {
            let hash = decode_hash(&task.hash_hex, self.family.index_size_bytes, self.family.num_tables)
                .expect("hash validated on arrival");
            let (id, evicted) = self.store.insert(&task.service, input.clone(), hash.clone(), nonce, now);
            if let Some(id) = id {
                self.records.push(EnRecord::StoreInsert {
                    time: now,
                    en: self.config.prefix.clone(),
                    service: task.service.clone(),
                    id,
                    input: input.clone(),
                    hash,
                });
            }
            if let Some(old) = evicted {
                self.counters.evictions += 1;
                self.records.push(EnRecord::StoreEvict {
                    time: now,
                    en: self.config.prefix.clone(),
                    service: old.service,
                    id: old.id,
                });
            }
        }
        let result = TaskResult {
            label: input.label,
            kind: ResultKind::Executed,
            executed_for: nonce,
            similarity: None,
            en_prefix: self.config.prefix.clone(),
        };
        let actions = push_to
            .iter()
            .map(|device| {
                let mut interest = Interest::new(push_name(device, &task.service, &task.hash_hex), nonce);
                interest.payload = Some(Payload::Result(result.clone()));
                AppAction::Send {
                    delay_us: 0,
                    packet: Packet::Interest(interest),
                }
            })
            .collect();
        self.tasks.insert(key.to_string(), TaskState::Ready(result));
        actions
    }
}
