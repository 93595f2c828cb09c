//! Central control plane: consecutive bucket ranges per EN, load-driven
//! rebalancing, and shortest-path FIB/rFIB installation.

use std::collections::BTreeMap;
use std::ops::Add;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::forwarder::{validate_partition, Fib, RfibEntry};
use crate::lsh::{index_size_for_bits, HashFamilyConfig};
use crate::packet::{FaceId, NodeId, APP_FACE};
use crate::sim::topology::{NodeRole, Topology};

/// Bucket ranges of one service, identical in every table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub service: String,
    pub bits_per_table: u32,
    pub num_tables: usize,
    /// EN prefix to its inclusive range in each table.
    pub ranges: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Assignment {
    /// rFIB entries as seen from one forwarder; `face_of` maps an EN prefix to
    /// the face leading to it.
    pub fn rfib_entries(&self, mut face_of: impl FnMut(&str) -> Option<FaceId>) -> Result<Vec<RfibEntry>> {
        self.ranges
            .iter()
            .map(|(en, ranges)| {
                let face = face_of(en).ok_or_else(|| config_err(format!("no face towards {en}")))?;
                Ok(RfibEntry {
                    service: self.service.clone(),
                    en_prefix: en.clone(),
                    face,
                    index_size_bytes: index_size_for_bits(self.bits_per_table),
                    bucket_ranges: ranges.clone(),
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let entries = self.rfib_entries(|_| Some(APP_FACE))?;
        validate_partition(&self.service, self.bits_per_table, &entries)
    }

    /// Interval sizes in EN order for table `t`.
    pub fn sizes(&self, t: usize) -> Vec<u64> {
        self.ranges
            .values()
            .map(|r| u64::from(r[t].1) - u64::from(r[t].0) + 1)
            .collect()
    }
}

fn ranges_from_sizes(sizes: &[u64]) -> Vec<(u32, u32)> {
    let mut lo = 0u64;
    sizes
        .iter()
        .map(|&s| {
            let r = (lo as u32, (lo + s - 1) as u32);
            lo += s;
            r
        })
        .collect()
}

fn build(service: &str, config: &HashFamilyConfig, ens: &[String], sizes: &[u64]) -> Assignment {
    let ranges = ranges_from_sizes(sizes);
    Assignment {
        service: service.to_string(),
        bits_per_table: config.bits_per_table,
        num_tables: config.num_tables,
        ranges: ens
            .iter()
            .zip(ranges)
            .map(|(en, r)| (en.clone(), vec![r; config.num_tables]))
            .collect(),
    }
}

/// Splits every table's index space into near-equal consecutive intervals, the
/// first `2^k mod n` one bucket larger, handed out to ENs in lexicographic order.
pub fn assign_buckets(service: &str, ens: &[String], config: &HashFamilyConfig) -> Result<Assignment> {
    config.validate()?;
    let mut ens = ens.to_vec();
    ens.sort();
    ens.dedup();
    if ens.is_empty() {
        return Err(config_err(format!("no EN offers service {service}")));
    }
    let total = config.buckets_per_table();
    let n = ens.len() as u64;
    if n > total {
        return Err(config_err(format!(
            "{n} ENs for {service} but only {total} buckets per table"
        )));
    }
    let sizes: Vec<u64> = (0..n).map(|i| total / n + u64::from(i < total % n)).collect();
    Ok(build(service, config, &ens, &sizes))
}

/// When the busiest EN carries more than `skew_factor` times the load of the
/// idlest, resizes every EN's interval in proportion to `1 / (load + 1)`, keeping
/// EN order so each interval stays contiguous. Every EN keeps at least one bucket.
pub fn rebalance(current: &Assignment, load: &BTreeMap<String, u64>, skew_factor: f64) -> Option<Assignment> {
    let ens: Vec<String> = current.ranges.keys().cloned().collect();
    if ens.len() < 2 {
        return None;
    }
    let loads: Vec<u64> = ens.iter().map(|e| load.get(e).copied().unwrap_or(0)).collect();
    let (min, max) = (*loads.iter().min()?, *loads.iter().max()?);
    if max == 0 || (min > 0 && max as f64 <= skew_factor * min as f64) {
        return None;
    }
    let total = 1u64 << current.bits_per_table;
    let weights: Vec<f64> = loads.iter().map(|&l| 1.0 / (l as f64 + 1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let spare = total - ens.len() as u64;
    let shares: Vec<f64> = weights.iter().map(|w| spare as f64 * w / wsum).collect();
    let mut sizes: Vec<u64> = shares.iter().map(|s| 1 + s.floor() as u64).collect();
    let mut order: Vec<usize> = (0..ens.len()).collect();
    // Largest remainder, earlier EN first on ties.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - sizes.iter().sum::<u64>();
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    let config = HashFamilyConfig::new(current.num_tables, current.bits_per_table, 1, 0);
    let next = build(&current.service, &config, &ens, &sizes);
    (next != *current).then_some(next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
struct Cost {
    hops: u32,
    delay_us: u64,
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            hops: self.hops + o.hops,
            delay_us: self.delay_us + o.delay_us,
        }
    }
}

/// Next hops computed from shortest paths (fewest hops, then lowest delay, then
/// lowest face id).
#[derive(Debug, Clone)]
pub struct Routes {
    /// `next[dst][src]`: face at `src` towards `dst` and the path cost.
    next: Vec<Vec<Option<(FaceId, u32, u64)>>>,
}

impl Routes {
    pub fn compute(topo: &Topology) -> Result<Self> {
        let mut graph: UnGraph<NodeId, u64> = UnGraph::new_undirected();
        let idx: Vec<NodeIndex> = topo.nodes().iter().map(|n| graph.add_node(n.id)).collect();
        for l in topo.links() {
            graph.add_edge(idx[l.a.0 as usize], idx[l.b.0 as usize], l.delay_us);
        }
        let n = topo.nodes().len();
        let mut next = vec![vec![None; n]; n];
        for dst in 0..n {
            let dist = dijkstra(&graph, idx[dst], None, |e| Cost { hops: 1, delay_us: *e.weight() });
            for src in 0..n {
                let Some(&d) = dist.get(&idx[src]) else {
                    return Err(config_err(format!("node {} cannot reach node {}", NodeId(src as u32), NodeId(dst as u32))));
                };
                if src == dst {
                    next[dst][src] = Some((APP_FACE, 0, 0));
                    continue;
                }
                // Devices never carry transit traffic.
                let face = topo
                    .adjacency(NodeId(src as u32))
                    .iter()
                    .filter(|a| a.peer.0 as usize == dst || topo.node(a.peer).role == NodeRole::Router)
                    .filter(|a| {
                        dist.get(&idx[a.peer.0 as usize])
                            .is_some_and(|&p| p + Cost { hops: 1, delay_us: a.delay_us } == d)
                    })
                    .map(|a| a.face)
                    .min()
                    .expect("a shortest path leaves through some neighbour");
                next[dst][src] = Some((face, d.hops, d.delay_us));
            }
        }
        Ok(Self { next })
    }

    pub fn face_toward(&self, from: NodeId, to: NodeId) -> Option<FaceId> {
        self.next.get(to.0 as usize)?.get(from.0 as usize)?.map(|(f, _, _)| f)
    }

    /// `(hops, one-way delay)` of the chosen path.
    pub fn distance(&self, from: NodeId, to: NodeId) -> Option<(u32, u64)> {
        self.next.get(to.0 as usize)?.get(from.0 as usize)?.map(|(_, h, d)| (h, d))
    }
}

/// FIBs for every node: each EN and device prefix along shortest paths (the own
/// prefix goes to the app face), and each service prefix towards the nearest EN
/// offering it, ties broken by EN prefix.
pub fn install_routes(topo: &Topology) -> Result<(Routes, BTreeMap<NodeId, Fib>)> {
    let routes = Routes::compute(topo)?;
    let mut services: BTreeMap<&str, Vec<(&str, NodeId)>> = BTreeMap::new();
    for en in topo.ens() {
        for s in &en.services {
            services
                .entry(s.as_str())
                .or_default()
                .push((en.en_prefix.as_deref().unwrap(), en.id));
        }
    }
    let mut fibs = BTreeMap::new();
    for node in topo.nodes() {
        let mut fib = Fib::new();
        for dst in topo.nodes() {
            for prefix in dst.en_prefix.iter().chain(&dst.device_prefix) {
                fib.insert(prefix, routes.face_toward(node.id, dst.id).unwrap());
            }
        }
        for (service, ens) in &services {
            let (_, en) = ens
                .iter()
                .min_by_key(|(prefix, en)| (routes.distance(node.id, *en).unwrap(), *prefix))
                .unwrap();
            fib.insert(&format!("/{service}"), routes.face_toward(node.id, *en).unwrap());
        }
        fibs.insert(node.id, fib);
    }
    Ok((routes, fibs))
}

/// rFIB entries for one router.
pub fn rfib_for_node(topo: &Topology, routes: &Routes, node: NodeId, assignment: &Assignment) -> Result<Vec<RfibEntry>> {
    let en_node: BTreeMap<&str, NodeId> = topo
        .ens()
        .map(|n| (n.en_prefix.as_deref().unwrap(), n.id))
        .collect();
    assignment.rfib_entries(|en| en_node.get(en).and_then(|&id| routes.face_toward(node, id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::topology::{Link, NodeInfo};
    use proptest::prelude::*;

    fn ens(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn equal_split_two_ens() {
        let cfg = HashFamilyConfig::new(3, 8, 4, 0);
        let a = assign_buckets("s", &ens(&["/b", "/a"]), &cfg).unwrap();
        assert_eq!(a.ranges["/a"], vec![(0, 127); 3]);
        assert_eq!(a.ranges["/b"], vec![(128, 255); 3]);
        a.validate().unwrap();
    }

    #[test]
    fn remainder_goes_to_first_intervals() {
        let cfg = HashFamilyConfig::new(1, 2, 4, 0);
        let a = assign_buckets("s", &ens(&["/x", "/y", "/z"]), &cfg).unwrap();
        assert_eq!(a.sizes(0), vec![2, 1, 1]);
        let one = assign_buckets("s", &ens(&["/x"]), &cfg).unwrap();
        assert_eq!(one.ranges["/x"], vec![(0, 3)]);
        assert!(assign_buckets("s", &[], &cfg).is_err());
        assert!(assign_buckets("s", &ens(&["/1", "/2", "/3", "/4", "/5"]), &cfg).is_err());
    }

    #[test]
    fn rebalance_examples() {
        let cfg = HashFamilyConfig::new(2, 8, 4, 0);
        let a = assign_buckets("s", &ens(&["/a", "/b"]), &cfg).unwrap();
        let balanced = BTreeMap::from([("/a".to_string(), 10), ("/b".to_string(), 12)]);
        assert_eq!(rebalance(&a, &balanced, 2.0), None);
        let skewed = BTreeMap::from([("/a".to_string(), 0), ("/b".to_string(), 100)]);
        let r = rebalance(&a, &skewed, 2.0).unwrap();
        r.validate().unwrap();
        assert!(r.sizes(0)[1] < 128 && r.sizes(0)[0] > 128);
        assert_eq!(r.sizes(0), r.sizes(1));
        let single = assign_buckets("s", &ens(&["/a"]), &cfg).unwrap();
        assert_eq!(rebalance(&single, &skewed, 2.0), None);
    }

    proptest! {
        #[test]
        fn assignments_and_rebalances_partition(
            bits in 1u32..12,
            tables in 1usize..6,
            n in 1usize..8,
            loads in prop::collection::vec(0u64..1000, 8),
            skew in 1.0f64..4.0,
        ) {
            let cfg = HashFamilyConfig::new(tables, bits, 4, 0);
            let names: Vec<String> = (0..n).map(|i| format!("/en{i}")).collect();
            let a = match assign_buckets("s", &names, &cfg) {
                Ok(a) => a,
                Err(_) => { prop_assert!(n as u64 > 1 << bits); return Ok(()); }
            };
            a.validate().unwrap();
            let load: BTreeMap<String, u64> = names.iter().cloned().zip(loads).collect();
            if let Some(r) = rebalance(&a, &load, skew) {
                r.validate().unwrap();
                prop_assert_eq!(r.num_tables, a.num_tables);
                prop_assert_eq!(r.bits_per_table, a.bits_per_table);
                prop_assert_eq!(r.ranges.keys().collect::<Vec<_>>(), a.ranges.keys().collect::<Vec<_>>());
            }
        }
    }

    fn line() -> Topology {
        // A - B - C, EN at C, device D on A.
        Topology::new(
            vec![
                NodeInfo::router(0),
                NodeInfo::router(1),
                NodeInfo::edge(2, "/edge/c", &["svc"]),
                NodeInfo::device(3, "/user/d"),
            ],
            vec![
                Link { a: NodeId(0), b: NodeId(1), delay_us: 5_000 },
                Link { a: NodeId(1), b: NodeId(2), delay_us: 5_000 },
                Link { a: NodeId(3), b: NodeId(0), delay_us: 2_000 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn line_routes() {
        let t = line();
        let (routes, fibs) = install_routes(&t).unwrap();
        let a_fib = &fibs[&NodeId(0)];
        assert_eq!(a_fib.longest_prefix_match("/edge/c/x").unwrap().1, FaceId(1));
        assert_eq!(a_fib.longest_prefix_match("/svc/task/00").unwrap().1, FaceId(1));
        assert_eq!(fibs[&NodeId(2)].longest_prefix_match("/edge/c").unwrap().1, APP_FACE);
        assert_eq!(fibs[&NodeId(2)].longest_prefix_match("/user/d/svc/input/00/0").unwrap().1, FaceId(1));
        assert_eq!(fibs[&NodeId(3)].longest_prefix_match("/user/d").unwrap().1, APP_FACE);
        assert_eq!(routes.distance(NodeId(3), NodeId(2)), Some((3, 12_000)));
    }

    #[test]
    fn equal_cost_paths_take_lowest_face() {
        // Square: 0-1-3 and 0-2-3 with equal delays.
        let t = Topology::new(
            (0..4).map(NodeInfo::router).collect(),
            vec![
                Link { a: NodeId(0), b: NodeId(2), delay_us: 5 },
                Link { a: NodeId(0), b: NodeId(1), delay_us: 5 },
                Link { a: NodeId(1), b: NodeId(3), delay_us: 5 },
                Link { a: NodeId(2), b: NodeId(3), delay_us: 5 },
            ],
        )
        .unwrap();
        let routes = Routes::compute(&t).unwrap();
        assert_eq!(routes.face_toward(NodeId(0), NodeId(3)), Some(FaceId(1)));
        // Lower delay beats face order at equal hop count.
        let t = Topology::new(
            (0..4).map(NodeInfo::router).collect(),
            vec![
                Link { a: NodeId(0), b: NodeId(2), delay_us: 9 },
                Link { a: NodeId(0), b: NodeId(1), delay_us: 5 },
                Link { a: NodeId(1), b: NodeId(3), delay_us: 5 },
                Link { a: NodeId(2), b: NodeId(3), delay_us: 5 },
            ],
        )
        .unwrap();
        assert_eq!(Routes::compute(&t).unwrap().face_toward(NodeId(0), NodeId(3)), Some(FaceId(2)));
    }

    #[test]
    fn rfib_faces_follow_routes() {
        let t = line();
        let (routes, _) = install_routes(&t).unwrap();
        let cfg = HashFamilyConfig::new(2, 8, 4, 0);
        let a = assign_buckets("svc", &ens(&["/edge/c"]), &cfg).unwrap();
        let at_a = rfib_for_node(&t, &routes, NodeId(0), &a).unwrap();
        assert_eq!(at_a[0].face, FaceId(1));
        let at_c = rfib_for_node(&t, &routes, NodeId(2), &a).unwrap();
        assert_eq!(at_c[0].face, APP_FACE);
    }
}
