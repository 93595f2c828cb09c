//! NDN forwarder with a Content Store, PIT, FIB and the reuse FIB (rFIB).
//!
//! Interest pipeline, in order:
//! 1. exact-name CS lookup, a hit answers on the incoming face;
//! 2. PIT lookup, an existing entry absorbs the Interest (aggregation);
//! 3. an Interest carrying a forwarding hint is routed by FIB on the hint;
//! 4. a reuse task reaching a forwarder with a non-empty rFIB gets an EN selected by
//!    majority vote over its per-table buckets, and that EN is attached as the hint;
//! 5. everything else is routed by FIB longest-prefix match on the name.
//!
//! Step 4 only ever runs once per task: after it the Interest carries a hint and
//! every later forwarder takes step 3.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroUsize;

use lru::LruCache;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::lsh::{decode_hash, index_size_for_bits};
use crate::names::{self, parse_name, ForwardingHint, ParsedName, TaskName};
use crate::packet::{Data, FaceId, Interest, NodeId, Packet, Payload, SimTime};

pub const DEFAULT_PIT_LIFETIME_US: u64 = 4_000_000;

/// Per-packet processing charge, drawn uniformly from inclusive microsecond ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub fib_us: (u64, u64),
    pub rfib_us: (u64, u64),
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            fib_us: (71, 101),
            rfib_us: (74, 106),
        }
    }
}

impl DelayModel {
    pub fn sample(&self, path: LookupPath, rng: &mut impl Rng) -> u64 {
        let (lo, hi) = match path {
            LookupPath::Fib => self.fib_us,
            LookupPath::Rfib => self.rfib_us,
        };
        rng.random_range(lo..=hi)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, (lo, hi)) in [("fib_us", self.fib_us), ("rfib_us", self.rfib_us)] {
            if lo > hi {
                return Err(config_err(format!("{label}: lower bound {lo} above upper bound {hi}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LookupPath {
    Fib,
    Rfib,
}

impl LookupPath {
    pub fn as_str(self) -> &'static str {
        match self {
            LookupPath::Fib => "fib",
            LookupPath::Rfib => "rfib",
        }
    }
}

/// LRU cache of Data packets keyed by exact name. Capacity 0 disables caching.
#[derive(Debug)]
pub struct ContentStore {
    cache: Option<LruCache<String, Data>>,
}

impl ContentStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            cache: NonZeroUsize::new(capacity).map(LruCache::new),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.cap().get())
    }

    pub fn len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact-name lookup; a hit becomes the most recently used entry.
    pub fn lookup(&mut self, name: &str) -> Option<Data> {
        self.cache.as_mut()?.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.cache.as_ref().is_some_and(|c| c.contains(name))
    }

    /// Returns the name of the entry evicted to make room, if any.
    pub fn insert(&mut self, name: String, mut data: Data) -> Option<String> {
        let cache = self.cache.as_mut()?;
        data.served_from_cs = None;
        match cache.push(name.clone(), data) {
            Some((old, _)) if old != name => Some(old),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitEntry {
    pub name: String,
    pub downstream_faces: BTreeSet<FaceId>,
    pub created: SimTime,
    pub expiry: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibEntry {
    pub prefix: String,
    pub faces: Vec<FaceId>,
}

/// Name-prefix routes with component-wise longest-prefix match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fib {
    routes: BTreeMap<String, Vec<FaceId>>,
}

impl Fib {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: &str, face: FaceId) {
        let faces = self.routes.entry(names::normalize_prefix(prefix)).or_default();
        if !faces.contains(&face) {
            faces.push(face);
        }
    }

    pub fn entries(&self) -> Vec<FibEntry> {
        self.routes
            .iter()
            .map(|(prefix, faces)| FibEntry {
                prefix: prefix.clone(),
                faces: faces.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn longest_prefix_match(&self, name: &str) -> Option<(&str, FaceId)> {
        let comps = names::components(name);
        (0..=comps.len()).rev().find_map(|n| {
            let key = names::join(&comps[..n]);
            self.routes
                .get_key_value(&key)
                .and_then(|(k, faces)| faces.first().map(|f| (k.as_str(), *f)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfibEntry {
    pub service: String,
    pub en_prefix: String,
    pub face: FaceId,
    pub index_size_bytes: u8,
    /// One inclusive `(lo, hi)` bucket range per table.
    pub bucket_ranges: Vec<(u32, u32)>,
}

impl RfibEntry {
    fn votes(&self, indices: &[u32]) -> usize {
        self.bucket_ranges
            .iter()
            .zip(indices)
            .filter(|((lo, hi), i)| (lo..=hi).contains(i))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRfib {
    pub bits_per_table: u32,
    pub num_tables: usize,
    pub index_size_bytes: u8,
    pub entries: Vec<RfibEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rfib {
    services: BTreeMap<String, ServiceRfib>,
}

impl Rfib {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn service(&self, service: &str) -> Option<&ServiceRfib> {
        self.services.get(service)
    }

    pub fn services(&self) -> impl Iterator<Item = (&String, &ServiceRfib)> {
        self.services.iter()
    }

    /// Replaces the entries for `service` after checking that, in every table, the
    /// entries' ranges partition `[0, 2^bits)` with one contiguous range per EN.
    pub fn install(&mut self, service: &str, bits_per_table: u32, entries: Vec<RfibEntry>) -> Result<()> {
        validate_partition(service, bits_per_table, &entries)?;
        let num_tables = entries[0].bucket_ranges.len();
        self.services.insert(
            service.to_string(),
            ServiceRfib {
                bits_per_table,
                num_tables,
                index_size_bytes: index_size_for_bits(bits_per_table),
                entries,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, service: &str) {
        self.services.remove(service);
    }
}

pub fn validate_partition(service: &str, bits_per_table: u32, entries: &[RfibEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(config_err(format!("rFIB for {service}: no entries")));
    }
    if !(1..=32).contains(&bits_per_table) {
        return Err(config_err(format!("rFIB for {service}: bits_per_table {bits_per_table} outside 1..=32")));
    }
    let size = index_size_for_bits(bits_per_table);
    let tables = entries[0].bucket_ranges.len();
    if tables == 0 {
        return Err(config_err(format!("rFIB for {service}: entries carry no tables")));
    }
    let mut prefixes = BTreeSet::new();
    for (i, e) in entries.iter().enumerate() {
        if e.service != service {
            return Err(config_err(format!(
                "rFIB for {service}: entry {i} belongs to service {}",
                e.service
            )));
        }
        if e.index_size_bytes != size {
            return Err(config_err(format!(
                "rFIB for {service}: entry {i} index size {} does not match ceil({bits_per_table}/8) = {size}",
                e.index_size_bytes
            )));
        }
        if e.bucket_ranges.len() != tables {
            return Err(config_err(format!(
                "rFIB for {service}: entry {i} has {} tables, expected {tables}",
                e.bucket_ranges.len()
            )));
        }
        if !prefixes.insert(e.en_prefix.as_str()) {
            return Err(config_err(format!(
                "rFIB for {service}: EN {} listed twice",
                e.en_prefix
            )));
        }
    }
    let top = (1u64 << bits_per_table) - 1;
    for t in 0..tables {
        let mut ranges: Vec<(u64, u64, &str)> = entries
            .iter()
            .map(|e| {
                let (lo, hi) = e.bucket_ranges[t];
                (u64::from(lo), u64::from(hi), e.en_prefix.as_str())
            })
            .collect();
        ranges.sort();
        let mut next = 0u64;
        for (lo, hi, en) in ranges {
            if lo > hi {
                return Err(config_err(format!(
                    "rFIB for {service}: table {t} range [{lo}, {hi}] of {en} is empty"
                )));
            }
            if lo < next {
                return Err(config_err(format!(
                    "rFIB for {service}: table {t} range [{lo}, {hi}] of {en} overlaps another EN"
                )));
            }
            if lo > next {
                return Err(config_err(format!(
                    "rFIB for {service}: table {t} buckets [{next}, {}] are not covered",
                    lo - 1
                )));
            }
            next = hi + 1;
        }
        if next != top + 1 {
            return Err(config_err(format!(
                "rFIB for {service}: table {t} ends at {} but the index space ends at {top}",
                next.saturating_sub(1)
            )));
        }
    }
    Ok(())
}

/// Majority vote: the EN whose ranges contain the most of the task's per-table
/// buckets; ties go to the lexicographically smallest EN prefix.
pub fn rfib_select(rfib: &Rfib, name: &TaskName) -> Result<(String, FaceId)> {
    let svc = rfib
        .service(&name.service)
        .ok_or_else(|| Error::NoRoute(format!("no rFIB entry for service {}", name.service)))?;
    let hash = decode_hash(&name.hash_hex, svc.index_size_bytes, svc.num_tables)?;
    hash.check_bits(svc.bits_per_table)?;
    let best = svc
        .entries
        .iter()
        .map(|e| (e.votes(&hash.indices), e))
        .max_by(|(va, a), (vb, b)| va.cmp(vb).then_with(|| b.en_prefix.cmp(&a.en_prefix)))
        .expect("installed rFIB has entries");
    Ok((best.1.en_prefix.clone(), best.1.face))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    CsHit,
    Aggregated,
    Retransmitted { face: FaceId },
    ForwardedByHint { face: FaceId },
    ForwardedByRfib { face: FaceId, en_prefix: String },
    ForwardedByFib { face: FaceId },
    NoRoute,
    Malformed(String),
    DataForwarded { copies: usize },
    Unsolicited,
}

impl Decision {
    pub fn label(&self) -> &'static str {
        match self {
            Decision::CsHit => "cs_hit",
            Decision::Aggregated => "aggregate",
            Decision::Retransmitted { .. } => "retransmit",
            Decision::ForwardedByHint { .. } => "forward_hint",
            Decision::ForwardedByRfib { .. } => "forward_rfib",
            Decision::ForwardedByFib { .. } => "forward_fib",
            Decision::NoRoute => "no_route",
            Decision::Malformed(_) => "malformed",
            Decision::DataForwarded { .. } => "data_forward",
            Decision::Unsolicited => "unsolicited",
        }
    }
}

/// What a forwarder did with one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub decision: Decision,
    /// Lookup path charged, if the packet was processed onward.
    pub path: Option<LookupPath>,
    pub charge_us: u64,
    pub sends: Vec<(FaceId, Packet)>,
}

impl Outcome {
    fn silent(decision: Decision) -> Self {
        Self {
            decision,
            path: None,
            charge_us: 0,
            sends: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct Forwarder {
    pub node: NodeId,
    pub cs: ContentStore,
    pit: BTreeMap<String, PitEntry>,
    pub fib: Fib,
    pub rfib: Rfib,
    pub delays: DelayModel,
    pub pit_lifetime_us: u64,
}

impl Forwarder {
    pub fn new(node: NodeId, cs_capacity: usize, delays: DelayModel) -> Self {
        Self {
            node,
            cs: ContentStore::new(cs_capacity),
            pit: BTreeMap::new(),
            fib: Fib::new(),
            rfib: Rfib::new(),
            delays,
            pit_lifetime_us: DEFAULT_PIT_LIFETIME_US,
        }
    }

    pub fn pit_len(&self) -> usize {
        self.pit.len()
    }

    pub fn pit_entry(&self, name: &str) -> Option<&PitEntry> {
        self.pit.get(name)
    }

    pub fn on_interest(
        &mut self,
        mut interest: Interest,
        in_face: FaceId,
        now: SimTime,
        rng: &mut impl Rng,
    ) -> Outcome {
        let parsed = match parse_name(&interest.name) {
            Ok(p) => p,
            Err(e) => return Outcome::silent(Decision::Malformed(e.to_string())),
        };

        if let Some(mut data) = self.cs.lookup(&interest.name) {
            data.served_from_cs = Some(self.node);
            return Outcome {
                decision: Decision::CsHit,
                path: Some(LookupPath::Fib),
                charge_us: self.delays.sample(LookupPath::Fib, rng),
                sends: vec![(in_face, Packet::Data(data))],
            };
        }

        let retransmission = match self.pit.get_mut(&interest.name) {
            Some(entry) if entry.expiry >= now => {
                entry.downstream_faces.insert(in_face);
                if !interest.retransmission {
                    return Outcome::silent(Decision::Aggregated);
                }
                entry.expiry = now + self.pit_lifetime_us;
                true
            }
            _ => {
                self.pit.insert(
                    interest.name.clone(),
                    PitEntry {
                        name: interest.name.clone(),
                        downstream_faces: BTreeSet::from([in_face]),
                        created: now,
                        expiry: now + self.pit_lifetime_us,
                    },
                );
                false
            }
        };

        let routed = self.route(&mut interest, &parsed);
        match routed {
            Ok((face, path, decision)) => {
                let decision = if retransmission {
                    Decision::Retransmitted { face }
                } else {
                    decision
                };
                Outcome {
                    decision,
                    path: Some(path),
                    charge_us: self.delays.sample(path, rng),
                    sends: vec![(face, Packet::Interest(interest))],
                }
            }
            Err(e) => {
                if !retransmission {
                    self.pit.remove(&interest.name);
                }
                match e {
                    Error::MalformedName(m) => Outcome::silent(Decision::Malformed(m)),
                    _ => Outcome::silent(Decision::NoRoute),
                }
            }
        }
    }

    /// Steps 3 to 5 of the pipeline. Attaches a hint when the rFIB is consulted.
    fn route(&self, interest: &mut Interest, parsed: &ParsedName) -> Result<(FaceId, LookupPath, Decision)> {
        if let Some(hint) = &interest.hint {
            let (_, face) = self
                .fib
                .longest_prefix_match(&hint.en_prefix)
                .ok_or_else(|| Error::NoRoute(hint.en_prefix.clone()))?;
            return Ok((face, LookupPath::Fib, Decision::ForwardedByHint { face }));
        }
        if let ParsedName::Task(task) = parsed {
            let rfib_applies = task.is_reuse()
                && !task.is_result_fetch()
                && self.rfib.service(&task.service).is_some();
            if rfib_applies {
                let (en_prefix, face) = rfib_select(&self.rfib, task)?;
                interest.hint = Some(ForwardingHint::new(&en_prefix)?);
                return Ok((
                    face,
                    LookupPath::Rfib,
                    Decision::ForwardedByRfib { face, en_prefix },
                ));
            }
        }
        let (_, face) = self
            .fib
            .longest_prefix_match(&interest.name)
            .ok_or_else(|| Error::NoRoute(interest.name.clone()))?;
        Ok((face, LookupPath::Fib, Decision::ForwardedByFib { face }))
    }

    pub fn on_data(&mut self, data: Data, _in_face: FaceId, now: SimTime, rng: &mut impl Rng) -> Outcome {
        let entry = match self.pit.remove(&data.name) {
            Some(e) if e.expiry >= now => e,
            _ => return Outcome::silent(Decision::Unsolicited),
        };
        if matches!(data.payload, Payload::Result(_)) {
            self.cache_result(&data);
        }
        let copies = entry.downstream_faces.len();
        Outcome {
            decision: Decision::DataForwarded { copies },
            path: Some(LookupPath::Fib),
            charge_us: self.delays.sample(LookupPath::Fib, rng),
            sends: entry
                .downstream_faces
                .into_iter()
                .map(|f| (f, Packet::Data(data.clone())))
                .collect(),
        }
    }

    /// Results fetched from a specific EN are also cached under the plain task
    /// name so that later tasks with the same hash can hit.
    fn cache_result(&mut self, data: &Data) {
        self.cs.insert(data.name.clone(), data.clone());
        if let Ok(ParsedName::Task(t)) = parse_name(&data.name) {
            if t.is_result_fetch() {
                let alias = t.without_en_prefix().to_string();
                let mut copy = data.clone();
                copy.name = alias.clone();
                self.cs.insert(alias, copy);
            }
        }
    }

    /// Removes and returns entries whose expiry is before `now`.
    pub fn pit_expire(&mut self, now: SimTime) -> Vec<PitEntry> {
        let expired: Vec<String> = self
            .pit
            .iter()
            .filter(|(_, e)| e.expiry < now)
            .map(|(k, _)| k.clone())
            .collect();
        expired
            .into_iter()
            .filter_map(|k| self.pit.remove(&k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::names::parse_name;
    use crate::packet::{ResultKind, TaskResult};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn entry(service: &str, en: &str, face: u32, ranges: Vec<(u32, u32)>) -> RfibEntry {
        RfibEntry {
            service: service.into(),
            en_prefix: en.into(),
            face: FaceId(face),
            index_size_bytes: 1,
            bucket_ranges: ranges,
        }
    }

    /// EN1 owns tables 1 and 3 around the example buckets, EN2 owns table 2's.
    fn louvre_rfib() -> Rfib {
        let mut rfib = Rfib::new();
        rfib.install(
            "OpenPose",
            8,
            vec![
                entry("OpenPose", "/Paris/Louvre/EN1", 1, vec![(0, 127), (0, 127), (0, 127)]),
                entry("OpenPose", "/Paris/Louvre/EN2", 2, vec![(128, 255), (128, 255), (128, 255)]),
            ],
        )
        .unwrap();
        rfib
    }

    fn task(name: &str) -> TaskName {
        parse_name(name).unwrap().as_task().unwrap().clone()
    }

    fn result_data(name: &str) -> Data {
        Data::new(
            name,
            Payload::Result(TaskResult {
                label: 1,
                kind: ResultKind::Executed,
                executed_for: 1,
                similarity: None,
                en_prefix: "/en".into(),
            }),
        )
    }

    fn forwarder_with_route() -> Forwarder {
        let mut f = Forwarder::new(NodeId(1), 4, DelayModel::default());
        f.fib.insert("/svc", FaceId(2));
        f.fib.insert("/edge/en1", FaceId(3));
        f
    }

    #[test]
    fn rfib_majority_vote_golden_example() {
        let (en, face) = rfib_select(&louvre_rfib(), &task("/OpenPose/task/6E810F")).unwrap();
        assert_eq!(en, "/Paris/Louvre/EN1");
        assert_eq!(face, FaceId(1));
    }

    #[test]
    fn rfib_single_en_always_selected() {
        let mut rfib = Rfib::new();
        rfib.install("s", 8, vec![entry("s", "/only", 4, vec![(0, 255), (0, 255)])]).unwrap();
        for h in ["0000", "FFFF", "7F80"] {
            assert_eq!(rfib_select(&rfib, &task(&format!("/s/task/{h}"))).unwrap().0, "/only");
        }
    }

    #[test]
    fn rfib_tie_breaks_lexicographically() {
        let mut rfib = Rfib::new();
        rfib.install(
            "s",
            8,
            vec![
                entry("s", "/b", 1, vec![(0, 127), (128, 255)]),
                entry("s", "/a", 2, vec![(128, 255), (0, 127)]),
            ],
        )
        .unwrap();
        // table 0 -> /b, table 1 -> /a: 1-1 tie
        assert_eq!(rfib_select(&rfib, &task("/s/task/0000")).unwrap().0, "/a");
    }

    #[test]
    fn rfib_errors() {
        let rfib = louvre_rfib();
        assert!(matches!(rfib_select(&rfib, &task("/Other/task/6E810F")), Err(Error::NoRoute(_))));
        assert!(matches!(
            rfib_select(&rfib, &task("/OpenPose/task/6E81")),
            Err(Error::MalformedName(_))
        ));
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        let mut rfib = Rfib::new();
        let overlap = vec![
            entry("s", "/a", 1, vec![(0, 130)]),
            entry("s", "/b", 2, vec![(128, 255)]),
        ];
        assert!(rfib.install("s", 8, overlap).is_err());
        let gap = vec![
            entry("s", "/a", 1, vec![(0, 100)]),
            entry("s", "/b", 2, vec![(128, 255)]),
        ];
        assert!(rfib.install("s", 8, gap).is_err());
        let short = vec![entry("s", "/a", 1, vec![(0, 200)])];
        assert!(rfib.install("s", 8, short).is_err());
        let wrong_width = vec![RfibEntry {
            index_size_bytes: 2,
            ..entry("s", "/a", 1, vec![(0, 255)])
        }];
        assert!(rfib.install("s", 8, wrong_width).is_err());
        assert!(rfib.is_empty());
    }

    #[test]
    fn fib_longest_prefix_match() {
        let mut fib = Fib::new();
        fib.insert("/edge", FaceId(1));
        fib.insert("/edge/en1", FaceId(2));
        assert_eq!(fib.longest_prefix_match("/edge/en1/svc/task/00").unwrap().1, FaceId(2));
        assert_eq!(fib.longest_prefix_match("/edge/en10/x").unwrap().1, FaceId(1));
        assert!(fib.longest_prefix_match("/other").is_none());
        fib.insert("/", FaceId(9));
        assert_eq!(fib.longest_prefix_match("/other").unwrap().1, FaceId(9));
    }

    #[test]
    fn pit_aggregates_identical_names() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        let first = f.on_interest(Interest::new("/svc/task/00", 1), FaceId(5), 0, &mut r);
        assert_eq!(first.sends.len(), 1);
        for (face, nonce) in [(6, 2), (7, 3)] {
            let o = f.on_interest(Interest::new("/svc/task/00", nonce), FaceId(face), 10, &mut r);
            assert_eq!(o.decision, Decision::Aggregated);
            assert!(o.sends.is_empty());
        }
        let out = f.on_data(result_data("/svc/task/00"), FaceId(2), 20, &mut r);
        assert_eq!(out.decision, Decision::DataForwarded { copies: 3 });
        let faces: Vec<FaceId> = out.sends.iter().map(|(f, _)| *f).collect();
        assert_eq!(faces, vec![FaceId(5), FaceId(6), FaceId(7)]);
        assert_eq!(f.cs.len(), 1);
        assert_eq!(f.pit_len(), 0);
    }

    #[test]
    fn cs_hit_answers_locally() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        f.on_interest(Interest::new("/svc/task/00", 1), FaceId(5), 0, &mut r);
        f.on_data(result_data("/svc/task/00"), FaceId(2), 10, &mut r);
        let o = f.on_interest(Interest::new("/svc/task/00", 2), FaceId(6), 20, &mut r);
        assert_eq!(o.decision, Decision::CsHit);
        assert_eq!(o.sends.len(), 1);
        assert_eq!(o.sends[0].0, FaceId(6));
        match &o.sends[0].1 {
            Packet::Data(d) => assert_eq!(d.served_from_cs, Some(NodeId(1))),
            other => panic!("expected data, got {other:?}"),
        }
        assert_eq!(f.pit_len(), 0);
    }

    #[test]
    fn only_results_are_cached_and_fetch_results_get_an_alias() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        f.on_interest(Interest::new("/svc/task/00", 1), FaceId(5), 0, &mut r);
        let ttc = Data::new("/svc/task/00", Payload::Ttc { ttc_us: 5, en_prefix: "/edge/en1".into() });
        f.on_data(ttc, FaceId(2), 1, &mut r);
        assert!(f.cs.is_empty());

        f.on_interest(Interest::new("/edge/en1/svc/task/00", 1), FaceId(5), 2, &mut r);
        f.on_data(result_data("/edge/en1/svc/task/00"), FaceId(3), 3, &mut r);
        assert!(f.cs.contains("/edge/en1/svc/task/00"));
        assert!(f.cs.contains("/svc/task/00"));
    }

    #[test]
    fn unsolicited_data_is_dropped() {
        let mut f = forwarder_with_route();
        let out = f.on_data(result_data("/svc/task/00"), FaceId(2), 0, &mut rng());
        assert_eq!(out.decision, Decision::Unsolicited);
        assert!(out.sends.is_empty());
        assert!(f.cs.is_empty());
    }

    #[test]
    fn content_store_evicts_least_recently_used() {
        let mut cs = ContentStore::new(2);
        assert_eq!(cs.insert("a".into(), result_data("a")), None);
        assert_eq!(cs.insert("b".into(), result_data("b")), None);
        assert!(cs.lookup("a").is_some());
        assert_eq!(cs.insert("c".into(), result_data("c")), Some("b".into()));
        assert!(cs.contains("a") && cs.contains("c") && !cs.contains("b"));
        assert_eq!(cs.len(), 2);
        let mut off = ContentStore::new(0);
        assert_eq!(off.insert("a".into(), result_data("a")), None);
        assert!(off.lookup("a").is_none());
    }

    #[test]
    fn rfib_lookup_attaches_hint_and_hint_skips_rfib() {
        let mut f = Forwarder::new(NodeId(1), 0, DelayModel::default());
        f.rfib = louvre_rfib();
        f.fib.insert("/Paris/Louvre/EN1", FaceId(1));
        f.fib.insert("/Paris/Louvre/EN2", FaceId(2));
        let mut r = rng();
        let o = f.on_interest(Interest::new("/OpenPose/task/6E810F", 1), FaceId(9), 0, &mut r);
        assert_eq!(o.path, Some(LookupPath::Rfib));
        assert!((74..=106).contains(&o.charge_us));
        let Packet::Interest(fwd) = &o.sends[0].1 else { panic!() };
        assert_eq!(fwd.hint.as_ref().unwrap().en_prefix, "/Paris/Louvre/EN1");

        // A second forwarder receiving the hinted Interest does a FIB lookup only,
        // even though its rFIB would pick the other EN.
        let mut g = Forwarder::new(NodeId(2), 0, DelayModel::default());
        g.rfib = louvre_rfib();
        g.fib.insert("/Paris/Louvre/EN1", FaceId(4));
        let mut hinted = Interest::new("/OpenPose/task/FFFFFF", 2);
        hinted.hint = Some(ForwardingHint::new("/Paris/Louvre/EN1").unwrap());
        let o = g.on_interest(hinted, FaceId(1), 0, &mut r);
        assert_eq!(o.decision, Decision::ForwardedByHint { face: FaceId(4) });
        assert_eq!(o.path, Some(LookupPath::Fib));
        assert!((71..=101).contains(&o.charge_us));
    }

    #[test]
    fn noreuse_and_fetch_names_bypass_rfib() {
        let mut f = Forwarder::new(NodeId(1), 0, DelayModel::default());
        f.rfib = louvre_rfib();
        f.fib.insert("/OpenPose", FaceId(7));
        f.fib.insert("/Paris/Louvre/EN2", FaceId(2));
        let mut r = rng();
        let o = f.on_interest(Interest::new("/OpenPose/task-noreuse/0A0B0C0D", 1), FaceId(9), 0, &mut r);
        assert_eq!(o.decision, Decision::ForwardedByFib { face: FaceId(7) });
        let o = f.on_interest(Interest::new("/Paris/Louvre/EN2/OpenPose/task/6E810F", 2), FaceId(9), 0, &mut r);
        assert_eq!(o.decision, Decision::ForwardedByFib { face: FaceId(2) });
    }

    #[test]
    fn empty_rfib_falls_back_to_fib() {
        let mut f = forwarder_with_route();
        let o = f.on_interest(Interest::new("/svc/task/00", 1), FaceId(9), 0, &mut rng());
        assert_eq!(o.decision, Decision::ForwardedByFib { face: FaceId(2) });
    }

    #[test]
    fn no_route_drops_and_clears_pit() {
        let mut f = Forwarder::new(NodeId(1), 0, DelayModel::default());
        let o = f.on_interest(Interest::new("/nowhere/x", 1), FaceId(9), 0, &mut rng());
        assert_eq!(o.decision, Decision::NoRoute);
        assert_eq!(f.pit_len(), 0);
    }

    #[test]
    fn retransmission_is_reforwarded() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        f.on_interest(Interest::new("/svc/x/1", 1), FaceId(0), 0, &mut r);
        let mut again = Interest::new("/svc/x/1", 2);
        again.retransmission = true;
        let o = f.on_interest(again, FaceId(0), 5, &mut r);
        assert_eq!(o.decision, Decision::Retransmitted { face: FaceId(2) });
        assert_eq!(o.sends.len(), 1);
    }

    #[test]
    fn pit_expiry() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        assert!(f.pit_expire(0).is_empty());
        f.on_interest(Interest::new("/svc/a", 1), FaceId(5), 0, &mut r);
        assert!(f.pit_expire(0).is_empty());
        let purged = f.pit_expire(5_000_000);
        assert_eq!(purged.len(), 1);
        assert_eq!(purged[0].expiry, 4_000_000);
        assert_eq!(f.pit_len(), 0);
    }

    #[test]
    fn expired_entry_does_not_aggregate() {
        let mut f = forwarder_with_route();
        let mut r = rng();
        f.on_interest(Interest::new("/svc/a", 1), FaceId(5), 0, &mut r);
        let o = f.on_interest(Interest::new("/svc/a", 2), FaceId(6), 4_000_001, &mut r);
        assert_eq!(o.decision, Decision::ForwardedByFib { face: FaceId(2) });
    }
}
