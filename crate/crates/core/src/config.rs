//! Declarative experiment description, loaded from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::Assignment;
use crate::error::{Error, Result};
use crate::forwarder::validate_partition;
use crate::lsh::{index_size_for_bits, HashFamilyConfig};
use crate::sim::topology::{self, Link, NodeInfo, Topology, TopologyParams};
use crate::sim::workload::{Arrival, Correlation, WorkloadParams};
use crate::packet::{ms_to_us, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub hash: HashSection,
    pub topology: TopologySection,
    pub services: Vec<ServiceSection>,
    pub workload: WorkloadSection,
    pub delays: DelaySection,
    pub capacity: CapacitySection,
    pub edge: EdgeSection,
    pub rfib: RfibSection,
    pub rebalance: RebalanceSection,
    pub loss: LossSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            hash: HashSection::default(),
            topology: TopologySection::default(),
            services: vec![ServiceSection::default()],
            workload: WorkloadSection::default(),
            delays: DelaySection::default(),
            capacity: CapacitySection::default(),
            edge: EdgeSection::default(),
            rfib: RfibSection::default(),
            rebalance: RebalanceSection::default(),
            loss: LossSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashSection {
    pub num_tables: usize,
    pub bits_per_table: u32,
    /// Defaults to ceil(bits_per_table / 8).
    pub index_size_bytes: Option<u8>,
    pub dimension: usize,
    pub probe_radius: u32,
    /// Seed of the hyperplanes shared by every device and EN.
    pub seed: u64,
}

impl Default for HashSection {
    fn default() -> Self {
        Self {
            num_tables: 5,
            bits_per_table: 8,
            index_size_bytes: None,
            dimension: 128,
            probe_radius: 1,
            seed: 7,
        }
    }
}

impl HashSection {
    pub fn family(&self) -> HashFamilyConfig {
        HashFamilyConfig::new(self.num_tables, self.bits_per_table, self.dimension, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Generated,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub nodes: usize,
    pub ens: usize,
    pub devices: usize,
    pub core_delay_ms: f64,
    pub access_delay_ms: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub node: Vec<ExplicitNode>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub link: Vec<ExplicitLink>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Generated,
            nodes: 20,
            ens: 10,
            devices: 10,
            core_delay_ms: 5.0,
            access_delay_ms: 2.0,
            node: Vec::new(),
            link: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplicitRole {
    #[default]
    Router,
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitNode {
    pub id: u32,
    #[serde(default)]
    pub role: ExplicitRole,
    #[serde(default)]
    pub en: bool,
    /// EN or device prefix; generated from the id when absent.
    pub prefix: Option<String>,
    /// Services of a hosted EN; all services when absent.
    pub services: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitLink {
    pub a: u32,
    pub b: u32,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub name: String,
    pub exec_min_ms: f64,
    pub exec_max_ms: f64,
    pub nominal_ms: f64,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            name: "classify".into(),
            exec_min_ms: 70.0,
            exec_max_ms: 100.0,
            nominal_ms: 85.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSetting {
    #[default]
    Inline,
    Pull,
    Push,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    pub tasks: usize,
    pub correlation: Correlation,
    pub num_clusters: usize,
    pub hot_clusters: usize,
    pub sigma: Option<f64>,
    pub interarrival_ms: f64,
    pub arrival: Arrival,
    pub similarity_threshold: f64,
    pub deadline_ms: Option<f64>,
    pub reuse: bool,
    pub mode: ModeSetting,
    pub input_size_bytes: u64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            seed: None,
            tasks: 1_000,
            correlation: Correlation::High,
            num_clusters: 100,
            hot_clusters: 10,
            sigma: None,
            interarrival_ms: 10.0,
            arrival: Arrival::Poisson,
            similarity_threshold: 0.9,
            deadline_ms: None,
            reuse: true,
            mode: ModeSetting::Inline,
            input_size_bytes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySection {
    pub fib_us: [u64; 2],
    pub rfib_us: [u64; 2],
    /// Fixed hashing charge; the measured per-table-count values when absent.
    pub hashing_ms: Option<f64>,
    /// Fixed search charge; the measured table by store size when absent.
    pub search_ms: Option<f64>,
    pub pit_lifetime_ms: f64,
}

impl Default for DelaySection {
    fn default() -> Self {
        Self {
            fib_us: [71, 101],
            rfib_us: [74, 106],
            hashing_ms: None,
            search_ms: None,
            pit_lifetime_ms: 4_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    /// Stored tasks per service per EN.
    pub en_store: usize,
    /// Content Store entries on routers.
    pub cs: usize,
    pub device_cs: usize,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self {
            en_store: 20_000,
            cs: 1_000,
            device_cs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSection {
    pub segment_size: u64,
    pub max_retries: u32,
    pub initial_rtt_ms: f64,
    pub ewma_alpha: f64,
}

impl Default for EdgeSection {
    fn default() -> Self {
        Self {
            segment_size: crate::edge_node::DEFAULT_SEGMENT_SIZE,
            max_retries: crate::edge_node::DEFAULT_MAX_RETRIES,
            initial_rtt_ms: 50.0,
            ewma_alpha: crate::edge_node::DEFAULT_EWMA_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfibSection {
    pub enabled: bool,
    /// Static ranges; services listed here skip the even split.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub entry: Vec<StaticRfibEntry>,
}

impl Default for RfibSection {
    fn default() -> Self {
        Self {
            enabled: true,
            entry: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticRfibEntry {
    pub service: String,
    pub en: String,
    pub index_size_bytes: Option<u8>,
    /// One inclusive `[lo, hi]` per table.
    pub ranges: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RebalanceSection {
    pub enabled: bool,
    pub window_ms: f64,
    pub skew_factor: f64,
}

impl Default for RebalanceSection {
    fn default() -> Self {
        Self {
            enabled: false,
            window_ms: 1_000.0,
            skew_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub probability: f64,
    /// Open sessions older than this fail; 10 s when loss is enabled and unset.
    pub session_timeout_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub trace: bool,
    pub measure_recall: bool,
}

/// One problem found in a config, addressed by its dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e.to_string())
    }
}

/// Best-effort line of a dotted path in TOML source: the key inside its table
/// header, or the header itself for table paths. Array indices are skipped.
pub fn locate(source: &str, path: &str) -> Option<usize> {
    let parts: Vec<&str> = path.split('.').filter(|p| p.parse::<usize>().is_err()).collect();
    let (table, key) = match parts.split_last() {
        Some((k, t)) => (t.join("."), *k),
        None => return None,
    };
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == path.split('.').filter(|p| p.parse::<usize>().is_err()).collect::<Vec<_>>().join(".") {
                header_line.get_or_insert(i + 1);
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if current == table && k.trim() == key {
            return Some(i + 1);
        }
    }
    header_line
}

struct Checker<'a> {
    source: Option<&'a str>,
    /// Serialized config, used to tell which section keys exist.
    tree: Option<toml::Value>,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn err(&mut self, path: impl Into<String>, message: impl Into<String>) {
        let path = path.into();
        let line = self.source.and_then(|s| locate(s, &path));
        self.out.push(Diagnostic {
            path,
            line,
            message: message.into(),
        });
    }

    fn lift(&mut self, path: &str, r: Result<()>) {
        if let Err(e) = r {
            let msg = match e {
                Error::Config(m) => m,
                other => other.to_string(),
            };
            // Messages lead with the offending key when there is one.
            let first = msg.split_whitespace().next().unwrap_or_default();
            let known = self
                .tree
                .as_ref()
                .and_then(|t| t.get(path))
                .and_then(|section| section.get(first))
                .is_some();
            if known {
                self.err(format!("{path}.{first}"), msg);
            } else {
                self.err(path, msg);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| ConfigError {
            diagnostics: vec![Diagnostic {
                path: "<document>".into(),
                line: e.span().map(|s| source[..s.start].matches('\n').count() + 1),
                message: e.message().to_string(),
            }],
        })?;
        cfg.validate_with_source(Some(source))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, source: Option<&str>) -> Result<(), ConfigError> {
        let mut c = Checker { source, tree: toml::Value::try_from(self).ok(), out: Vec::new() };
        self.check(&mut c);
        if c.out.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { diagnostics: c.out })
        }
    }

    pub fn service_names(&self) -> Vec<String> {
        self.services.iter().map(|s| s.name.clone()).collect()
    }

    fn check(&self, c: &mut Checker) {
        let h = &self.hash;
        c.lift("hash", h.family().validate());
        if let Some(size) = h.index_size_bytes {
            let want = index_size_for_bits(h.bits_per_table);
            if size != want {
                c.err(
                    "hash.index_size_bytes",
                    format!("{size} byte(s) cannot hold exactly {} bits; expected ceil({}/8) = {want}", h.bits_per_table, h.bits_per_table),
                );
            }
        }
        if h.probe_radius > h.bits_per_table {
            c.err("hash.probe_radius", format!("radius {} exceeds bits_per_table {}", h.probe_radius, h.bits_per_table));
        }

        if self.services.is_empty() {
            c.err("services", "at least one service is required");
        }
        let mut names = BTreeSet::new();
        for (i, s) in self.services.iter().enumerate() {
            let p = format!("services.{i}");
            if s.name.is_empty() || s.name.contains('/') {
                c.err(format!("{p}.name"), format!("service name {:?} must be a single non-empty name component", s.name));
            }
            if !names.insert(s.name.as_str()) {
                c.err(format!("{p}.name"), format!("service {} declared twice", s.name));
            }
            if !(s.exec_min_ms >= 0.0 && s.exec_min_ms <= s.exec_max_ms) {
                c.err(format!("{p}.exec_min_ms"), format!("execution range [{}, {}] ms is empty", s.exec_min_ms, s.exec_max_ms));
            }
            if !(s.nominal_ms > 0.0) {
                c.err(format!("{p}.nominal_ms"), "nominal execution time must be positive");
            }
        }

        match self.build_topology() {
            Ok(topo) => {
                for s in &self.services {
                    if !topo.ens().any(|en| en.services.contains(&s.name)) {
                        c.err("topology", format!("no EN offers service {}", s.name));
                    }
                }
                for en in topo.ens() {
                    for s in &en.services {
                        if !names.contains(s.as_str()) {
                            c.err("topology.node", format!("EN {} offers undeclared service {s}", en.id));
                        }
                    }
                }
                if topo.devices().count() == 0 && self.workload.tasks > 0 {
                    c.err("topology.devices", "the workload needs at least one device");
                }
                self.check_static_rfib(c, &topo);
            }
            Err(e) => c.lift("topology", Err(e)),
        }

        let w = &self.workload;
        c.lift("workload", self.workload_params(0).validate());
        if !(w.interarrival_ms >= 0.0) {
            c.err("workload.interarrival_ms", "must be non-negative");
        }
        if w.mode == ModeSetting::Pull && w.input_size_bytes == 0 {
            c.err("workload.input_size_bytes", "pulled inputs need a positive input size");
        }
        if w.deadline_ms.is_some_and(|d| !(d > 0.0)) {
            c.err("workload.deadline_ms", "deadline must be positive");
        }

        let d = &self.delays;
        for (name, [lo, hi]) in [("fib_us", d.fib_us), ("rfib_us", d.rfib_us)] {
            if lo > hi {
                c.err(format!("delays.{name}"), format!("lower bound {lo} above upper bound {hi}"));
            }
        }
        for (name, v) in [("hashing_ms", d.hashing_ms), ("search_ms", d.search_ms)] {
            if v.is_some_and(|v| !(v >= 0.0)) {
                c.err(format!("delays.{name}"), "must be non-negative");
            }
        }
        if !(d.pit_lifetime_ms > 0.0) {
            c.err("delays.pit_lifetime_ms", "must be positive");
        }

        let e = &self.edge;
        if e.segment_size == 0 {
            c.err("edge.segment_size", "must be positive");
        }
        if !(e.ewma_alpha > 0.0 && e.ewma_alpha <= 1.0) {
            c.err("edge.ewma_alpha", "must be in (0, 1]");
        }
        if !(e.initial_rtt_ms > 0.0) {
            c.err("edge.initial_rtt_ms", "must be positive");
        }

        let r = &self.rebalance;
        if !(r.window_ms > 0.0) {
            c.err("rebalance.window_ms", "must be positive");
        }
        if !(r.skew_factor >= 1.0) {
            c.err("rebalance.skew_factor", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.loss.probability) {
            c.err("loss.probability", "must be in [0, 1)");
        }
        if self.loss.session_timeout_ms.is_some_and(|t| !(t > 0.0)) {
            c.err("loss.session_timeout_ms", "must be positive");
        }
    }

    fn check_static_rfib(&self, c: &mut Checker, topo: &Topology) {
        let en_prefixes: BTreeSet<&str> = topo.ens().filter_map(|n| n.en_prefix.as_deref()).collect();
        for (i, e) in self.rfib.entry.iter().enumerate() {
            let p = format!("rfib.entry.{i}");
            if !en_prefixes.contains(crate::names::normalize_prefix(&e.en).as_str()) {
                c.err(format!("{p}.en"), format!("{} is not an EN prefix in the topology", e.en));
            }
            if !self.services.iter().any(|s| s.name == e.service) {
                c.err(format!("{p}.service"), format!("undeclared service {}", e.service));
            }
            if e.ranges.len() != self.hash.num_tables {
                c.err(format!("{p}.ranges"), format!("{} ranges for {} tables", e.ranges.len(), self.hash.num_tables));
            }
            let want = index_size_for_bits(self.hash.bits_per_table);
            if let Some(size) = e.index_size_bytes.filter(|s| *s != want) {
                c.err(format!("{p}.index_size_bytes"), format!("{size} does not match ceil({}/8) = {want}", self.hash.bits_per_table));
            }
        }
        if c.out.is_empty() {
            for a in self.static_assignments() {
                let entries = match a.rfib_entries(|_| Some(crate::packet::APP_FACE)) {
                    Ok(e) => e,
                    Err(e) => return c.lift("rfib.entry", Err(e)),
                };
                c.lift("rfib.entry", validate_partition(&a.service, a.bits_per_table, &entries));
            }
        }
    }

    /// Static rFIB layouts from `[[rfib.entry]]`, one per service.
    pub fn static_assignments(&self) -> Vec<Assignment> {
        let mut by_service: BTreeMap<&str, Assignment> = BTreeMap::new();
        for e in &self.rfib.entry {
            let a = by_service.entry(e.service.as_str()).or_insert_with(|| Assignment {
                service: e.service.clone(),
                bits_per_table: self.hash.bits_per_table,
                num_tables: self.hash.num_tables,
                ranges: BTreeMap::new(),
            });
            a.ranges.insert(
                crate::names::normalize_prefix(&e.en),
                e.ranges.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
            );
        }
        by_service.into_values().collect()
    }

    pub fn topology_params(&self, seed: u64) -> TopologyParams {
        let t = &self.topology;
        TopologyParams {
            seed,
            nodes: t.nodes,
            ens: t.ens,
            devices: t.devices,
            core_delay_us: ms_to_us(t.core_delay_ms),
            access_delay_us: ms_to_us(t.access_delay_ms),
            services: self.service_names(),
        }
    }

    pub fn build_topology_for_seed(&self, seed: u64) -> Result<Topology> {
        let t = &self.topology;
        if !(t.core_delay_ms >= 0.0 && t.access_delay_ms >= 0.0) {
            return Err(Error::Config("link delays must be non-negative".into()));
        }
        match t.kind {
            TopologyKind::Generated => topology::generate_topology(&self.topology_params(seed)),
            TopologyKind::Explicit => {
                let services = self.service_names();
                let mut nodes = t.node.clone();
                nodes.sort_by_key(|n| n.id);
                let mut device_index = 0;
                let infos = nodes
                    .iter()
                    .map(|n| match n.role {
                        ExplicitRole::Router if n.en => {
                            let prefix = n.prefix.clone().unwrap_or_else(|| topology::en_prefix_for(NodeId(n.id)));
                            let offered: Vec<&str> = match &n.services {
                                Some(list) => list.iter().map(String::as_str).collect(),
                                None => services.iter().map(String::as_str).collect(),
                            };
                            NodeInfo::edge(n.id, &prefix, &offered)
                        }
                        ExplicitRole::Router => NodeInfo::router(n.id),
                        ExplicitRole::Device => {
                            let prefix = n.prefix.clone().unwrap_or_else(|| topology::device_prefix_for(device_index));
                            device_index += 1;
                            NodeInfo::device(n.id, &prefix)
                        }
                    })
                    .collect();
                let links = t
                    .link
                    .iter()
                    .map(|l| Link {
                        a: NodeId(l.a),
                        b: NodeId(l.b),
                        delay_us: ms_to_us(l.delay_ms),
                    })
                    .collect();
                Topology::new(infos, links)
            }
        }
    }

    pub fn build_topology(&self) -> Result<Topology> {
        self.build_topology_for_seed(self.seed)
    }

    pub fn workload_params(&self, devices: usize) -> WorkloadParams {
        let w = &self.workload;
        WorkloadParams {
            seed: w.seed.unwrap_or(self.seed),
            tasks: w.tasks,
            dimension: self.hash.dimension,
            correlation: w.correlation,
            num_clusters: w.num_clusters,
            hot_clusters: w.hot_clusters,
            sigma: w.sigma,
            interarrival_us: ms_to_us(w.interarrival_ms),
            arrival: w.arrival,
            devices: devices.max(1),
            services: self.service_names(),
            similarity_threshold: w.similarity_threshold,
            deadline_us: w.deadline_ms.map(ms_to_us),
        }
    }
}

const ALIASES: [(&str, &str); 12] = [
    ("similarity_threshold", "workload.similarity_threshold"),
    ("threshold", "workload.similarity_threshold"),
    ("num_tables", "hash.num_tables"),
    ("bits_per_table", "hash.bits_per_table"),
    ("probe_radius", "hash.probe_radius"),
    ("correlation", "workload.correlation"),
    ("sigma", "workload.sigma"),
    ("tasks", "workload.tasks"),
    ("en_store", "capacity.en_store"),
    ("cs", "capacity.cs"),
    ("mode", "workload.mode"),
    ("nodes", "topology.nodes"),
];

pub fn resolve_key(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == key)
        .map_or(key, |(_, full)| full)
}

/// Parses a command-line value as a TOML scalar, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

/// Returns a copy of `base` with the dotted `key` (or one of its short aliases)
/// set to `value`. Unknown keys are rejected.
pub fn with_override(base: &ExperimentConfig, key: &str, value: toml::Value) -> Result<ExperimentConfig, ConfigError> {
    let path = resolve_key(key);
    let mut doc = toml::Value::try_from(base).expect("config serializes");
    let mut slot = &mut doc;
    let parts: Vec<&str> = path.split('.').collect();
    let bad = |msg: String| ConfigError {
        diagnostics: vec![Diagnostic { path: path.to_string(), line: None, message: msg }],
    };
    for (i, part) in parts.iter().enumerate() {
        let table = slot
            .as_table_mut()
            .ok_or_else(|| bad(format!("{} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value.clone());
            break;
        }
        slot = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let cfg: ExperimentConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| bad(format!("cannot set {key} = {value}: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn index_width_mismatch_is_rejected_with_line() {
        let src = "seed = 3\n[hash]\nbits_per_table = 9\nindex_size_bytes = 1\n";
        let err = ExperimentConfig::from_toml_str(src).unwrap_err();
        let d = &err.diagnostics[0];
        assert_eq!(d.path, "hash.index_size_bytes");
        assert_eq!(d.line, Some(4));
    }

    #[test]
    fn unknown_keys_and_syntax_errors_are_reported() {
        let err = ExperimentConfig::from_toml_str("[hash]\nnum_tabels = 3\n").unwrap_err();
        assert!(err.to_string().contains("num_tabels"), "{err}");
        assert_eq!(err.diagnostics[0].line, Some(2));
        let err = ExperimentConfig::from_toml_str("[hash\n").unwrap_err();
        assert_eq!(err.diagnostics[0].line, Some(1));
    }

    fn explicit_two_en() -> String {
        r#"
[topology]
kind = "explicit"
[[topology.node]]
id = 0
en = true
prefix = "/a"
[[topology.node]]
id = 1
en = true
prefix = "/b"
[[topology.node]]
id = 2
role = "device"
[[topology.link]]
a = 0
b = 1
delay_ms = 5.0
[[topology.link]]
a = 2
b = 0
delay_ms = 2.0
[hash]
num_tables = 1
"#
        .to_string()
    }

    #[test]
    fn overlapping_static_ranges_are_rejected() {
        let good = explicit_two_en()
            + "[[rfib.entry]]\nservice = \"classify\"\nen = \"/a\"\nranges = [[0, 127]]\n"
            + "[[rfib.entry]]\nservice = \"classify\"\nen = \"/b\"\nranges = [[128, 255]]\n";
        let cfg = ExperimentConfig::from_toml_str(&good).unwrap();
        assert_eq!(cfg.static_assignments().len(), 1);
        let bad = good.replace("[[128, 255]]", "[[100, 255]]");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn disconnected_explicit_topology_is_rejected() {
        let src = explicit_two_en().replace("[[topology.link]]\na = 0\nb = 1\ndelay_ms = 5.0\n", "");
        let err = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn uncovered_service_is_rejected() {
        let src = explicit_two_en().replace("prefix = \"/a\"", "prefix = \"/a\"\nservices = []")
            .replace("prefix = \"/b\"", "prefix = \"/b\"\nservices = []");
        let err = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert!(err.to_string().contains("no EN offers service classify"), "{err}");
    }

    #[test]
    fn overrides_resolve_aliases_and_reject_unknown_keys() {
        let base = ExperimentConfig::default();
        let cfg = with_override(&base, "similarity_threshold", parse_value("0.95")).unwrap();
        assert_eq!(cfg.workload.similarity_threshold, 0.95);
        let cfg = with_override(&base, "hash.num_tables", parse_value("10")).unwrap();
        assert_eq!(cfg.hash.num_tables, 10);
        let cfg = with_override(&base, "correlation", parse_value("low")).unwrap();
        assert_eq!(cfg.workload.correlation, Correlation::Low);
        assert!(with_override(&base, "workload.bogus", parse_value("1")).is_err());
        assert!(with_override(&base, "similarity_threshold", parse_value("1.5")).is_err());
    }
}
