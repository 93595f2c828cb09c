//! Post-processing of a finished run: completion times by source, reuse
//! accuracy and volume, forwarding errors and LSH recall against brute force.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::device::{CompletionSource, OffloadSession, SessionState};
use crate::edge_node::{ArrivalOutcome, EnCounters, EnRecord, ReuseStore};
use crate::lsh::{ConcatenatedHash, FeatureVector, HashFamily};
use crate::packet::us_to_ms;
use crate::sim::{ChargeStats, RunOutput};

/// Distribution of a sample in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (mean, std) = mean_std(&v);
        // Nearest rank.
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Self {
            count: v.len(),
            mean,
            std,
            min: v[0],
            p50: rank(0.5),
            p95: rank(0.95),
            max: v[v.len() - 1],
        })
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    /// Mean scratch time over mean CS-reuse time (local and network CS).
    pub scratch_over_cs: Option<f64>,
    pub scratch_over_en_reuse: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfibStats {
    pub lookups: u64,
    pub tasks_with_lookup: u64,
    pub max_per_task: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub threshold: Option<f64>,
    pub tasks: usize,
    pub finished: usize,
    pub failed: usize,
    /// Completion times by source, plus `all`.
    pub completion: BTreeMap<String, Summary>,
    /// Share of completed sessions per source, in percent.
    pub breakdown: BTreeMap<String, f64>,
    pub percent_reuse: Option<f64>,
    pub reused_sessions: usize,
    /// Absent when nothing was reused.
    pub accuracy: Option<f64>,
    pub en_arrivals: u64,
    pub forwarding_errors: u64,
    pub forwarding_error_rate: Option<f64>,
    pub recall_queries: u64,
    pub lsh_recall: Option<f64>,
    pub per_en: BTreeMap<String, EnCounters>,
    pub ratios: Ratios,
    pub deadline_misses: usize,
    pub rfib: RfibStats,
    pub charges: BTreeMap<String, ChargeStats>,
    pub segments_served: u64,
    pub packets_dropped: u64,
    pub events: u64,
    pub end_time_us: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, computed here rather than through the store so the
/// oracles share no code with what they check.
fn cosine(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let na = dot(&a.values, &a.values).sqrt();
    let nb = dot(&b.values, &b.values).sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    dot(&a.values, &b.values) / (na * nb)
}

fn shares_bucket(a: &ConcatenatedHash, b: &ConcatenatedHash) -> bool {
    a.indices.iter().zip(&b.indices).any(|(x, y)| x == y)
}

type StoreKey = (String, String);
type Snapshot = BTreeMap<u64, (Arc<FeatureVector>, ConcatenatedHash)>;

/// Replays store inserts and evictions and evaluates both oracles at each task
/// arrival: forwarding errors (scratch at one EN while another EN holds an
/// above-threshold task in one of the same buckets) and recall (the probed
/// candidate is as similar as the brute-force nearest stored task).
fn replay_oracles(records: &[EnRecord], measure_recall: bool) -> (u64, u64, u64, u64) {
    let mut stores: BTreeMap<StoreKey, Snapshot> = BTreeMap::new();
    let (mut arrivals, mut errors, mut queries, mut hits) = (0, 0, 0, 0);
    for r in records {
        match r {
            EnRecord::StoreInsert { en, service, id, input, hash, .. } => {
                stores
                    .entry((en.clone(), service.clone()))
                    .or_default()
                    .insert(*id, (input.clone(), hash.clone()));
            }
            EnRecord::StoreEvict { en, service, id, .. } => {
                if let Some(s) = stores.get_mut(&(en.clone(), service.clone())) {
                    s.remove(id);
                }
            }
            EnRecord::Arrival(a) => {
                arrivals += 1;
                let Some(hash) = &a.hash else { continue };
                if a.outcome == ArrivalOutcome::Scratch {
                    let elsewhere = stores.iter().any(|((en, service), store)| {
                        *en != a.en
                            && *service == a.service
                            && store
                                .values()
                                .any(|(v, h)| shares_bucket(hash, h) && cosine(&a.input, v) >= a.threshold)
                    });
                    if elsewhere {
                        errors += 1;
                    }
                }
                if measure_recall && a.outcome != ArrivalOutcome::Joined {
                    let own = stores.get(&(a.en.clone(), a.service.clone()));
                    let best = own
                        .into_iter()
                        .flat_map(|s| s.values())
                        .map(|(v, _)| cosine(&a.input, v))
                        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
                    if let Some(best) = best {
                        queries += 1;
                        if a.probed_best.is_some_and(|(_, sim)| sim >= best - 1e-9) {
                            hits += 1;
                        }
                    }
                }
            }
        }
    }
    (arrivals, errors, queries, hits)
}

fn finished_sessions(sessions: &[OffloadSession]) -> impl Iterator<Item = (&OffloadSession, CompletionSource)> {
    sessions
        .iter()
        .filter(|s| s.state == SessionState::Done)
        .filter_map(|s| s.completion_source.map(|c| (s, c)))
}

/// Fraction of reused sessions whose result carries the offloaded input's own
/// label; absent when nothing was reused.
pub fn reuse_accuracy(sessions: &[OffloadSession]) -> Option<f64> {
    let reused: Vec<bool> = finished_sessions(sessions)
        .filter(|(_, c)| c.is_reuse())
        .filter_map(|(s, _)| s.result.as_ref().map(|r| r.label == s.input_label))
        .collect();
    (!reused.is_empty()).then(|| reused.iter().filter(|c| **c).count() as f64 / reused.len() as f64)
}

/// Mean scratch completion over mean CS-reuse and over mean EN-reuse completion.
pub fn completion_ratios(sessions: &[OffloadSession]) -> Ratios {
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, c) in finished_sessions(sessions) {
        let class = match c {
            CompletionSource::LocalCs | CompletionSource::NetworkCs => "cs",
            CompletionSource::EnReuse => "en_reuse",
            CompletionSource::EnScratch => "scratch",
            CompletionSource::PitAggregate => continue,
        };
        by.entry(class).or_default().push(s.completion_us().unwrap() as f64);
    }
    let mean = |k: &str| by.get(k).filter(|v| !v.is_empty()).map(|v| mean_std(v).0);
    let ratio = |k: &str| match (mean("scratch"), mean(k)) {
        (Some(s), Some(r)) if r > 0.0 => Some(s / r),
        _ => None,
    };
    Ratios {
        scratch_over_cs: ratio("cs"),
        scratch_over_en_reuse: ratio("en_reuse"),
    }
}

/// Share of queries whose probed nearest stored task is as similar as the
/// brute-force nearest task in the same store (no threshold).
pub fn lsh_recall(
    store: &ReuseStore,
    family: &HashFamily,
    service: &str,
    queries: &[FeatureVector],
    probe_radius: u32,
) -> crate::Result<Option<f64>> {
    let stored = store.tasks(service);
    if stored.is_empty() || queries.is_empty() {
        return Ok(None);
    }
    let norms: Vec<f64> = stored.iter().map(|t| dot(&t.input.values, &t.input.values).sqrt()).collect();
    let mut hits = 0usize;
    for q in queries {
        let qn = dot(&q.values, &q.values).sqrt();
        let best = stored
            .iter()
            .zip(&norms)
            .filter(|(_, &n)| n > 0.0 && qn > 0.0)
            .map(|(t, &n)| dot(&q.values, &t.input.values) / (qn * n))
            .fold(f64::NEG_INFINITY, f64::max);
        let hash = family.hash_vector(q)?;
        if let Some((_, sim)) = store.nearest(service, q, &hash, probe_radius) {
            if sim >= best - 1e-9 {
                hits += 1;
            }
        }
    }
    Ok(Some(hits as f64 / queries.len() as f64))
}

pub fn report(run: &RunOutput, measure_recall: bool) -> MetricsReport {
    let sessions = &run.sessions;
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, c) in finished_sessions(sessions) {
        let ms = us_to_ms(s.completion_us().unwrap());
        times.entry(c.as_str().to_string()).or_default().push(ms);
        times.entry("all".to_string()).or_default().push(ms);
    }
    let completion = times
        .iter()
        .filter_map(|(k, v)| Summary::of(v).map(|s| (k.clone(), s)))
        .collect();
    let finished = times.get("all").map_or(0, Vec::len);
    let breakdown = CompletionSource::ALL
        .iter()
        .map(|c| {
            let n = times.get(c.as_str()).map_or(0, Vec::len);
            let pct = if finished == 0 { 0.0 } else { 100.0 * n as f64 / finished as f64 };
            (c.as_str().to_string(), pct)
        })
        .collect();
    let reused_sessions = finished_sessions(sessions).filter(|(_, c)| c.is_reuse()).count();
    let (en_arrivals, forwarding_errors, recall_queries, recall_hits) = replay_oracles(&run.en_records, measure_recall);
    let rfib = RfibStats {
        lookups: run.rfib_lookups.values().map(|&n| u64::from(n)).sum(),
        tasks_with_lookup: run.rfib_lookups.len() as u64,
        max_per_task: run.rfib_lookups.values().copied().max().unwrap_or(0),
    };
    let thresholds: Vec<f64> = sessions.iter().map(|s| s.threshold).collect();
    let threshold = thresholds
        .first()
        .copied()
        .filter(|t| thresholds.iter().all(|x| x == t));
    MetricsReport {
        seed: run.seed,
        threshold,
        tasks: sessions.len(),
        finished,
        failed: sessions.iter().filter(|s| s.state == SessionState::Failed).count(),
        completion,
        breakdown,
        percent_reuse: (finished > 0).then(|| 100.0 * reused_sessions as f64 / finished as f64),
        reused_sessions,
        accuracy: reuse_accuracy(sessions),
        en_arrivals,
        forwarding_errors,
        forwarding_error_rate: (en_arrivals > 0).then(|| forwarding_errors as f64 / en_arrivals as f64),
        recall_queries,
        lsh_recall: (recall_queries > 0).then(|| recall_hits as f64 / recall_queries as f64),
        per_en: run.en_counters.clone(),
        ratios: completion_ratios(sessions),
        deadline_misses: sessions.iter().filter(|s| s.missed_deadline()).count(),
        rfib,
        charges: run.charges.clone(),
        segments_served: run.segments_served,
        packets_dropped: run.packets_dropped,
        events: run.events,
        end_time_us: run.end_time,
    }
}

impl MetricsReport {
    /// Flat scalar view used by the summary table and cross-seed aggregation.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("tasks".into(), self.tasks as f64);
        m.insert("finished".into(), self.finished as f64);
        m.insert("failed".into(), self.failed as f64);
        let mut opt = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        opt("threshold", self.threshold);
        opt("percent_reuse", self.percent_reuse);
        opt("accuracy", self.accuracy);
        opt("forwarding_error_rate", self.forwarding_error_rate);
        opt("lsh_recall", self.lsh_recall);
        opt("ratio_scratch_over_cs", self.ratios.scratch_over_cs);
        opt("ratio_scratch_over_en_reuse", self.ratios.scratch_over_en_reuse);
        for (k, v) in &self.breakdown {
            m.insert(format!("pct_{k}"), *v);
        }
        for (k, s) in &self.completion {
            m.insert(format!("mean_ms_{k}"), s.mean);
        }
        m.insert("deadline_misses".into(), self.deadline_misses as f64);
        m.insert("rfib_lookups".into(), self.rfib.lookups as f64);
        m.insert("en_arrivals".into(), self.en_arrivals as f64);
        m.insert(
            "scratch_executions".into(),
            self.per_en.values().map(|c| c.scratch_executions as f64).sum(),
        );
        m
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
        let frac = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
        let ratio = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}x"));
        let _ = writeln!(s, "seed {}: {} tasks, {} finished, {} failed", self.seed, self.tasks, self.finished, self.failed);
        let _ = writeln!(s, "percent of reuse:      {}", pct(self.percent_reuse));
        let _ = writeln!(s, "reuse accuracy:        {}", frac(self.accuracy));
        let _ = writeln!(s, "forwarding error rate: {}", frac(self.forwarding_error_rate));
        if self.recall_queries > 0 {
            let _ = writeln!(s, "LSH recall:            {}", frac(self.lsh_recall));
        }
        let _ = writeln!(
            s,
            "scratch/CS-reuse {}, scratch/EN-reuse {}",
            ratio(self.ratios.scratch_over_cs),
            ratio(self.ratios.scratch_over_en_reuse)
        );
        let _ = writeln!(s, "completion time (ms) by source:");
        for (k, c) in &self.completion {
            let share = self.breakdown.get(k).map_or(String::new(), |p| format!("{p:6.2}%"));
            let _ = writeln!(s, "  {k:<14} {share:>7} n={:<6} mean {:8.2} p50 {:8.2} p95 {:8.2}", c.count, c.mean, c.p50, c.p95);
        }
        s
    }
}

pub fn write_completion_csv(r: &MetricsReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "count", "mean_ms", "std_ms", "min_ms", "p50_ms", "p95_ms", "max_ms"])?;
    for (k, s) in &r.completion {
        w.write_record([
            k.clone(),
            s.count.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.min.to_string(),
            s.p50.to_string(),
            s.p95.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_breakdown_csv(r: &MetricsReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "count", "percent"])?;
    for (k, p) in &r.breakdown {
        let n = r.completion.get(k).map_or(0, |s| s.count);
        w.write_record([k.clone(), n.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(r: &MetricsReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    for (k, v) in r.scalars() {
        w.write_record([k, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_en_csv(r: &MetricsReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "en",
        "tasks_received",
        "reuse_hits",
        "scratch_executions",
        "inflight_joins",
        "evictions",
        "pull_interests",
        "failed",
    ])?;
    for (en, c) in &r.per_en {
        w.write_record([
            en.clone(),
            c.tasks_received.to_string(),
            c.reuse_hits.to_string(),
            c.scratch_executions.to_string(),
            c.inflight_joins.to_string(),
            c.evictions.to_string(),
            c.pull_interests.to_string(),
            c.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sessions_csv(sessions: &[OffloadSession], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "nonce",
        "task_name",
        "service",
        "start_us",
        "end_us",
        "completion_us",
        "source",
        "state",
        "threshold",
        "input_label",
        "result_label",
        "correct",
        "fetches",
        "missed_deadline",
        "failure",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for s in sessions {
        w.write_record([
            s.nonce.to_string(),
            s.task_name.clone(),
            s.service.clone(),
            s.start.to_string(),
            opt(s.end.map(|e| e.to_string())),
            opt(s.completion_us().map(|c| c.to_string())),
            opt(s.completion_source.map(|c| c.as_str().to_string())),
            format!("{:?}", s.state).to_lowercase(),
            s.threshold.to_string(),
            s.input_label.to_string(),
            opt(s.result.as_ref().map(|r| r.label.to_string())),
            opt(s.result_correct().map(|c| c.to_string())),
            s.fetches.to_string(),
            s.missed_deadline().to_string(),
            opt(s.failure.clone()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean ± sample std of every scalar across per-seed reports. A metric absent
/// from some seeds is aggregated over the seeds that have it.
pub fn aggregate(reports: &[MetricsReport]) -> BTreeMap<String, MeanStd> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.scalars() {
            values.entry(k).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(k, v)| {
            let (mean, std) = mean_std(&v);
            (k, MeanStd { mean, std, n: v.len() })
        })
        .collect()
}

pub fn write_aggregate_csv(agg: &BTreeMap<String, MeanStd>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "mean", "std", "n"])?;
    for (k, m) in agg {
        w.write_record([k.clone(), m.mean.to_string(), m.std.to_string(), m.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_node::TaskArrival;
    use crate::lsh::HashFamilyConfig;
    use crate::packet::{ResultKind, TaskResult};
    use proptest::prelude::*;

    fn session(nonce: u64, source: CompletionSource, ms: u64, label: u32, result: u32) -> OffloadSession {
        OffloadSession {
            nonce,
            task_name: format!("/s/task/{nonce:02X}"),
            service: "s".into(),
            start: 0,
            sent_at: 0,
            state: SessionState::Done,
            rtt_estimate_us: None,
            en_prefix: None,
            result: Some(TaskResult {
                label: result,
                kind: ResultKind::Reused,
                executed_for: 0,
                similarity: None,
                en_prefix: "/en".into(),
            }),
            completion_source: Some(source),
            end: Some(ms * 1_000),
            threshold: 0.9,
            deadline_us: Some(50_000),
            input_label: label,
            push: false,
            fetches: 0,
            failure: None,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.p50, s.p95), (1.0, 4.0, 2.0, 4.0));
        assert!((s.mean - 2.5).abs() < 1e-12);
        // Sample std of 1..4 is sqrt(5/3).
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn accuracy_counts_only_reused_sessions() {
        let sessions = vec![
            session(1, CompletionSource::EnScratch, 100, 1, 9),
            session(2, CompletionSource::EnReuse, 20, 1, 1),
            session(3, CompletionSource::NetworkCs, 10, 2, 3),
            session(4, CompletionSource::LocalCs, 1, 4, 4),
        ];
        assert_eq!(reuse_accuracy(&sessions), Some(2.0 / 3.0));
        assert_eq!(reuse_accuracy(&sessions[..1]), None);
    }

    #[test]
    fn ratios_from_means() {
        let sessions = vec![
            session(1, CompletionSource::EnScratch, 120, 0, 0),
            session(2, CompletionSource::EnScratch, 100, 0, 0),
            session(3, CompletionSource::EnReuse, 20, 0, 0),
            session(4, CompletionSource::NetworkCs, 10, 0, 0),
            session(5, CompletionSource::LocalCs, 12, 0, 0),
        ];
        let r = completion_ratios(&sessions);
        assert!((r.scratch_over_en_reuse.unwrap() - 5.5).abs() < 1e-12);
        assert!((r.scratch_over_cs.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(completion_ratios(&sessions[..2]), Ratios::default());
    }

    fn run_with(sessions: Vec<OffloadSession>, records: Vec<EnRecord>) -> RunOutput {
        RunOutput {
            seed: 1,
            hash: HashFamilyConfig::new(2, 8, 2, 0),
            sessions,
            en_records: records,
            en_counters: BTreeMap::new(),
            rfib_lookups: BTreeMap::from([(1, 1), (2, 1)]),
            decisions: BTreeMap::new(),
            charges: BTreeMap::new(),
            assignments: Vec::new(),
            segments_served: 0,
            packets_dropped: 0,
            end_time: 0,
            events: 0,
            trace: Vec::new(),
        }
    }

    fn fv(x: f64, y: f64) -> Arc<FeatureVector> {
        Arc::new(FeatureVector::new(vec![x, y], 0).unwrap())
    }

    fn arrival(en: &str, input: Arc<FeatureVector>, hash: Vec<u32>, outcome: ArrivalOutcome, best: Option<(u64, f64)>) -> EnRecord {
        EnRecord::Arrival(TaskArrival {
            time: 0,
            en: en.into(),
            nonce: 1,
            service: "s".into(),
            threshold: 0.9,
            input,
            hash: Some(ConcatenatedHash::new(1, hash)),
            outcome,
            reused_id: None,
            probed_best: best,
        })
    }

    fn insert(en: &str, id: u64, input: Arc<FeatureVector>, hash: Vec<u32>) -> EnRecord {
        EnRecord::StoreInsert {
            time: 0,
            en: en.into(),
            service: "s".into(),
            id,
            input,
            hash: ConcatenatedHash::new(1, hash),
        }
    }

    #[test]
    fn forwarding_error_needs_similar_task_in_a_shared_bucket_elsewhere() {
        let records = vec![
            insert("/b", 1, fv(1.0, 0.0), vec![5, 6]),
            // Similar and sharing table 1's bucket at /b: error.
            arrival("/a", fv(1.0, 0.01), vec![9, 6], ArrivalOutcome::Scratch, None),
            // Similar but no shared bucket: not an error.
            arrival("/a", fv(1.0, 0.01), vec![9, 7], ArrivalOutcome::Scratch, None),
            // Shared bucket but dissimilar: not an error.
            arrival("/a", fv(0.0, 1.0), vec![5, 6], ArrivalOutcome::Scratch, None),
            // Reused: never an error.
            arrival("/a", fv(1.0, 0.0), vec![5, 6], ArrivalOutcome::Reused, None),
            EnRecord::StoreEvict { time: 0, en: "/b".into(), service: "s".into(), id: 1 },
            arrival("/a", fv(1.0, 0.0), vec![5, 6], ArrivalOutcome::Scratch, None),
        ];
        let (arrivals, errors, _, _) = replay_oracles(&records, false);
        assert_eq!((arrivals, errors), (5, 1));
    }

    #[test]
    fn recall_compares_against_brute_force_in_own_store() {
        let records = vec![
            // Empty store: not a query.
            arrival("/a", fv(1.0, 0.0), vec![1, 1], ArrivalOutcome::Scratch, None),
            insert("/a", 1, fv(1.0, 0.0), vec![1, 1]),
            insert("/a", 2, fv(0.0, 1.0), vec![2, 2]),
            arrival("/a", fv(1.0, 0.1), vec![1, 1], ArrivalOutcome::Reused, Some((1, cosine(&fv(1.0, 0.1), &fv(1.0, 0.0))))),
            arrival("/a", fv(1.0, 0.1), vec![2, 2], ArrivalOutcome::Scratch, Some((2, 0.1))),
            arrival("/a", fv(1.0, 0.1), vec![3, 3], ArrivalOutcome::Scratch, None),
        ];
        let (_, _, queries, hits) = replay_oracles(&records, true);
        assert_eq!((queries, hits), (3, 1));
    }

    #[test]
    fn report_breakdown_and_aggregate() {
        let sessions = vec![
            session(1, CompletionSource::EnScratch, 120, 1, 1),
            session(2, CompletionSource::EnReuse, 20, 1, 1),
            session(3, CompletionSource::PitAggregate, 60, 1, 1),
        ];
        let r = report(&run_with(sessions, vec![]), false);
        let total: f64 = r.breakdown.values().sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(r.percent_reuse, Some(200.0 / 3.0));
        assert_eq!(r.deadline_misses, 2);
        assert_eq!(r.rfib.lookups, 2);
        assert_eq!(r.threshold, Some(0.9));
        let agg = aggregate(&[r.clone(), r.clone()]);
        assert_eq!(agg["percent_reuse"].std, 0.0);
        assert_eq!(agg["percent_reuse"].n, 2);

        let mut buf = Vec::new();
        write_sessions_csv(&run_with(vec![session(1, CompletionSource::EnScratch, 1, 0, 0)], vec![]).sessions, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("en_scratch"));
    }

    #[test]
    fn standalone_recall_on_duplicates_is_one() {
        let cfg = HashFamilyConfig::new(3, 8, 8, 3);
        let family = HashFamily::new(cfg).unwrap();
        let mut store = ReuseStore::new(cfg, 1_000);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let inputs: Vec<FeatureVector> = (0..200)
            .map(|i| {
                let v = crate::sim::workload::random_unit_vector(&mut rng, 8);
                FeatureVector::new(v, i).unwrap()
            })
            .collect();
        for (i, v) in inputs.iter().enumerate() {
            let h = family.hash_vector(v).unwrap();
            store.insert("s", Arc::new(v.clone()), h, i as u64, 0);
        }
        assert_eq!(lsh_recall(&store, &family, "s", &inputs, 0).unwrap(), Some(1.0));
        assert_eq!(lsh_recall(&store, &family, "t", &inputs, 0).unwrap(), None);
    }

    proptest! {
        #[test]
        fn breakdown_sums_to_100(sources in prop::collection::vec(0usize..5, 1..60)) {
            let sessions: Vec<OffloadSession> = sources
                .iter()
                .enumerate()
                .map(|(i, s)| session(i as u64 + 1, CompletionSource::ALL[*s], 10 + i as u64, 0, 0))
                .collect();
            let r = report(&run_with(sessions, vec![]), false);
            let total: f64 = r.breakdown.values().sum();
            prop_assert!((total - 100.0).abs() <= 0.01);
        }
    }
}
