//! Random-hyperplane locality sensitive hashing.
//!
//! Every table owns `bits_per_table` random unit hyperplanes; the bucket index of a
//! vector in that table is its sign pattern against those hyperplanes (bit `i` is set
//! iff the dot product with hyperplane `i` is `>= 0`). Two vectors at angle `θ`
//! agree on a single bit with probability `1 - θ/π`, so near neighbours under cosine
//! similarity collide far more often than unrelated vectors.
//!
//! Indices are carried on the wire as fixed-width, big-endian, uppercase hex, one
//! `index_size_bytes * 2` character group per table, concatenated in table order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Widest table index that fits the name encoding.
pub const MAX_INDEX_SIZE_BYTES: u8 = 4;

/// Default multi-probe radius (self plus every bucket one bit away).
pub const DEFAULT_PROBE_RADIUS: u32 = 1;

/// A task input: feature coordinates plus the ground-truth class used by metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: u32,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, label: u32) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateInput("empty feature vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "non-finite coordinate at position {i}"
            )));
        }
        Ok(Self { values, label })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            label: self.label,
        }
    }

    /// Wire form used for pulled inputs: label (u32 LE), dimension (u32 LE), then
    /// the coordinates as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.values.len());
        out.extend_from_slice(&self.label.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`FeatureVector::to_bytes`]; trailing padding is ignored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::DegenerateInput("truncated feature vector encoding".into());
        let word = |at: usize| -> Result<u32> {
            let raw = bytes.get(at..at + 4).ok_or_else(short)?;
            Ok(u32::from_le_bytes(raw.try_into().expect("4 bytes")))
        };
        let label = word(0)?;
        let dim = word(4)? as usize;
        let body = bytes.get(8..8 + dim * 8).ok_or_else(short)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(values, label)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (|a| |b|)`, clamped into `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(config_err(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("zero-norm vector".into()));
    }
    Ok((dot(&a.values, &b.values) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamilyConfig {
    pub num_tables: usize,
    pub bits_per_table: u32,
    pub index_size_bytes: u8,
    pub dimension: usize,
    pub seed: u64,
}

impl HashFamilyConfig {
    /// Builds a config with `index_size_bytes` derived from `bits_per_table`.
    pub fn new(num_tables: usize, bits_per_table: u32, dimension: usize, seed: u64) -> Self {
        Self {
            num_tables,
            bits_per_table,
            index_size_bytes: index_size_for_bits(bits_per_table),
            dimension,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tables == 0 {
            return Err(config_err("num_tables must be at least 1"));
        }
        if !(1..=32).contains(&self.bits_per_table) {
            return Err(config_err(format!(
                "bits_per_table must be in 1..=32, got {}",
                self.bits_per_table
            )));
        }
        let want = index_size_for_bits(self.bits_per_table);
        if self.index_size_bytes != want {
            return Err(config_err(format!(
                "index_size_bytes {} does not match ceil(bits_per_table / 8) = {}",
                self.index_size_bytes, want
            )));
        }
        if self.dimension == 0 {
            return Err(config_err("dimension must be at least 1"));
        }
        Ok(())
    }

    /// Number of buckets per table, `2^bits_per_table`.
    pub fn buckets_per_table(&self) -> u64 {
        1u64 << self.bits_per_table
    }
}

pub fn index_size_for_bits(bits: u32) -> u8 {
    bits.div_ceil(8) as u8
}

/// One bucket of one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketIndex {
    pub table: usize,
    pub index: u32,
}

/// Per-table bucket indices of one input, in table order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConcatenatedHash {
    pub index_size_bytes: u8,
    pub indices: Vec<u32>,
}

impl ConcatenatedHash {
    pub fn new(index_size_bytes: u8, indices: Vec<u32>) -> Self {
        Self {
            index_size_bytes,
            indices,
        }
    }

    pub fn num_tables(&self) -> usize {
        self.indices.len()
    }

    pub fn bucket(&self, table: usize) -> BucketIndex {
        BucketIndex {
            table,
            index: self.indices[table],
        }
    }

    pub fn buckets(&self) -> impl Iterator<Item = BucketIndex> + '_ {
        (0..self.indices.len()).map(|t| self.bucket(t))
    }

    /// Rejects indices outside `[0, 2^bits)`.
    pub fn check_bits(&self, bits: u32) -> Result<()> {
        let limit = 1u64 << bits;
        match self.indices.iter().position(|&i| u64::from(i) >= limit) {
            Some(t) => Err(Error::MalformedName(format!(
                "table {t} index {} exceeds {bits}-bit range",
                self.indices[t]
            ))),
            None => Ok(()),
        }
    }
}

/// A seeded random-hyperplane family: `num_tables * bits_per_table` unit vectors.
#[derive(Debug, Clone)]
pub struct HashFamily {
    config: HashFamilyConfig,
    hyperplanes: Vec<Vec<f64>>,
}

impl HashFamily {
    /// Hyperplanes are drawn table by table from one seeded stream, so the first
    /// `n` tables of a larger family equal an `n`-table family with the same seed.
    pub fn new(config: HashFamilyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let count = config.num_tables * config.bits_per_table as usize;
        let hyperplanes = (0..count)
            .map(|_| random_unit_vector(&mut rng, config.dimension))
            .collect();
        Ok(Self {
            config,
            hyperplanes,
        })
    }

    pub fn config(&self) -> &HashFamilyConfig {
        &self.config
    }

    pub fn hash_vector(&self, v: &FeatureVector) -> Result<ConcatenatedHash> {
        if v.dimension() != self.config.dimension {
            return Err(config_err(format!(
                "vector dimension {} does not match family dimension {}",
                v.dimension(),
                self.config.dimension
            )));
        }
        let k = self.config.bits_per_table as usize;
        let indices = self
            .hyperplanes
            .chunks(k)
            .map(|planes| {
                planes.iter().enumerate().fold(0u32, |acc, (bit, plane)| {
                    if dot(&v.values, plane) >= 0.0 {
                        acc | (1 << bit)
                    } else {
                        acc
                    }
                })
            })
            .collect();
        Ok(ConcatenatedHash::new(self.config.index_size_bytes, indices))
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dimension: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn encode_hash(h: &ConcatenatedHash) -> String {
    let width = usize::from(h.index_size_bytes) * 2;
    h.indices
        .iter()
        .map(|i| format!("{i:0width$X}"))
        .collect()
}

pub fn decode_hash(s: &str, index_size_bytes: u8, num_tables: usize) -> Result<ConcatenatedHash> {
    if index_size_bytes == 0 || index_size_bytes > MAX_INDEX_SIZE_BYTES {
        return Err(config_err(format!(
            "index_size_bytes must be in 1..={MAX_INDEX_SIZE_BYTES}, got {index_size_bytes}"
        )));
    }
    let width = usize::from(index_size_bytes) * 2;
    if s.len() != width * num_tables {
        return Err(Error::MalformedName(format!(
            "hash {s:?} has length {}, expected {} ({num_tables} tables x {index_size_bytes} bytes)",
            s.len(),
            width * num_tables
        )));
    }
    if !is_upper_hex(s) {
        return Err(Error::MalformedName(format!(
            "hash {s:?} is not uppercase hex"
        )));
    }
    let indices = (0..num_tables)
        .map(|t| u32::from_str_radix(&s[t * width..(t + 1) * width], 16).expect("validated hex"))
        .collect();
    Ok(ConcatenatedHash::new(index_size_bytes, indices))
}

pub(crate) fn is_upper_hex(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b))
}

/// Every bucket of `h.table` within Hamming distance `probe_radius` of `h.index`
/// over the low `bits` bits, nearest first, ties by ascending index.
pub fn probe_set(h: BucketIndex, probe_radius: u32, bits: u32) -> Vec<BucketIndex> {
    let radius = probe_radius.min(bits);
    let mut out = Vec::new();
    for distance in 0..=radius {
        let mut layer = Vec::new();
        flip_masks(bits, distance, 0, 0, &mut |mask| layer.push(h.index ^ mask));
        layer.sort_unstable();
        out.extend(layer.into_iter().map(|index| BucketIndex {
            table: h.table,
            index,
        }));
    }
    out
}

fn flip_masks(bits: u32, remaining: u32, from: u32, mask: u32, emit: &mut impl FnMut(u32)) {
    if remaining == 0 {
        emit(mask);
        return;
    }
    for b in from..bits {
        if bits - b < remaining {
            break;
        }
        flip_masks(bits, remaining - 1, b + 1, mask | (1 << b), emit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn family(tables: usize, bits: u32, dim: usize) -> HashFamily {
        HashFamily::new(HashFamilyConfig::new(tables, bits, dim, 7)).unwrap()
    }

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec(), 0).unwrap()
    }

    #[test]
    fn zero_vector_sets_every_bit() {
        let f = family(3, 6, 4);
        let h = f.hash_vector(&fv(&[0.0; 4])).unwrap();
        assert_eq!(h.indices, vec![63, 63, 63]);
    }

    #[test]
    fn hashing_is_deterministic_and_scale_invariant() {
        let f = family(5, 8, 16);
        let v = fv(&(0..16).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
        let a = f.hash_vector(&v).unwrap();
        assert_eq!(a, f.hash_vector(&v).unwrap());
        assert_eq!(a, f.hash_vector(&v.scaled(2.0)).unwrap());
        let again = family(5, 8, 16);
        assert_eq!(a, again.hash_vector(&v).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let f = family(1, 8, 4);
        assert!(matches!(f.hash_vector(&fv(&[1.0, 2.0])), Err(Error::Config(_))));
    }

    #[test]
    fn smaller_family_is_a_prefix_of_larger() {
        let one = HashFamily::new(HashFamilyConfig::new(1, 8, 8, 3)).unwrap();
        let five = HashFamily::new(HashFamilyConfig::new(5, 8, 8, 3)).unwrap();
        let v = fv(&[0.3, -1.0, 0.2, 0.9, -0.4, 0.1, 0.0, 0.5]);
        assert_eq!(
            one.hash_vector(&v).unwrap().indices[0],
            five.hash_vector(&v).unwrap().indices[0]
        );
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_hash(&ConcatenatedHash::new(1, vec![110, 129, 15])), "6E810F");
        assert_eq!(encode_hash(&ConcatenatedHash::new(1, vec![0])), "00");
        assert_eq!(
            encode_hash(&ConcatenatedHash::new(4, vec![1, 256])),
            "0000000100000100"
        );
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_hash("6E810F", 1, 3).unwrap().indices, vec![110, 129, 15]);
        assert_eq!(decode_hash("00", 1, 1).unwrap().indices, vec![0]);
        assert_eq!(
            decode_hash("0000000100000100", 4, 2).unwrap().indices,
            vec![1, 256]
        );
        assert!(matches!(decode_hash("6E810", 1, 3), Err(Error::MalformedName(_))));
        assert!(matches!(decode_hash("6E81XF", 1, 3), Err(Error::MalformedName(_))));
        assert!(matches!(decode_hash("+E810F", 1, 3), Err(Error::MalformedName(_))));
    }

    #[test]
    fn cosine_examples() {
        let a = fv(&[1.0, 2.0, 3.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0])).unwrap().abs() < 1e-12);
        assert!((cosine_similarity(&a, &a.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&a, &fv(&[0.0, 0.0, 0.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn feature_vector_rejects_degenerate_values() {
        assert!(FeatureVector::new(vec![], 1).is_err());
        assert!(FeatureVector::new(vec![1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn feature_vector_bytes_round_trip_with_padding() {
        let v = FeatureVector::new(vec![0.25, -3.5, 1e-9], 42).unwrap();
        let mut bytes = v.to_bytes();
        bytes.resize(bytes.len() + 100, 0);
        assert_eq!(FeatureVector::from_bytes(&bytes).unwrap(), v);
        assert!(FeatureVector::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(HashFamilyConfig::new(5, 32, 8, 0).validate().is_ok());
        assert_eq!(HashFamilyConfig::new(1, 9, 8, 0).index_size_bytes, 2);
        let mut bad = HashFamilyConfig::new(1, 9, 8, 0);
        bad.index_size_bytes = 1;
        assert!(bad.validate().is_err());
        assert!(HashFamilyConfig::new(0, 8, 8, 0).validate().is_err());
        assert!(HashFamilyConfig::new(1, 33, 8, 0).validate().is_err());
    }

    // Brute-force Hamming ball, the oracle for probe_set.
    fn hamming_ball(index: u32, radius: u32, bits: u32) -> Vec<u32> {
        let mut all: Vec<u32> = (0..(1u32 << bits))
            .filter(|x| (x ^ index).count_ones() <= radius)
            .collect();
        all.sort_by_key(|x| ((x ^ index).count_ones(), *x));
        all
    }

    #[test]
    fn probe_set_examples() {
        let b = |index| BucketIndex { table: 2, index };
        assert_eq!(probe_set(b(0), 0, 2), vec![b(0)]);
        assert_eq!(probe_set(b(0), 1, 2), vec![b(0), b(1), b(2)]);
        let full: Vec<u32> = probe_set(b(5), 3, 3).into_iter().map(|x| x.index).collect();
        assert_eq!(full.len(), 8);
        assert_eq!(full, hamming_ball(5, 3, 3));
        assert_eq!(probe_set(b(5), 9, 3).len(), 8);
    }

    #[test]
    fn probe_set_matches_brute_force() {
        for bits in 1..=6 {
            for radius in 0..=bits + 1 {
                for index in 0..(1u32 << bits) {
                    let got: Vec<u32> = probe_set(BucketIndex { table: 0, index }, radius, bits)
                        .into_iter()
                        .map(|x| x.index)
                        .collect();
                    assert_eq!(got, hamming_ball(index, radius, bits));
                }
            }
        }
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn locality_near_pairs_collide_more_than_far_pairs() {
        let dim = 32;
        let f = family(1, 8, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut near_hits, mut far_hits, mut near_n, mut far_n) = (0, 0, 0, 0);
        while near_n < 1000 || far_n < 1000 {
            let a: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise: f64 = rng.random_range(0.0..2.0);
            let b: Vec<f64> = a
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + noise * z / 4.0
                })
                .collect();
            let (a, b) = (fv(&a), fv(&b));
            let sim = cosine_similarity(&a, &b).unwrap();
            let hit = f.hash_vector(&a).unwrap() == f.hash_vector(&b).unwrap();
            if sim >= 0.95 && near_n < 1000 {
                near_n += 1;
                near_hits += hit as usize;
            }
            let c = fv(&(0..dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<_>>());
            let far = cosine_similarity(&a, &c).unwrap();
            if far <= 0.0 && far_n < 1000 {
                far_n += 1;
                far_hits += (f.hash_vector(&a).unwrap() == f.hash_vector(&c).unwrap()) as usize;
            }
        }
        assert!(near_hits > far_hits, "near {near_hits} far {far_hits}");
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(size in 1u8..=4, raw in prop::collection::vec(any::<u32>(), 1..8)) {
            let bits = u32::from(size) * 8;
            let indices: Vec<u32> = raw
                .into_iter()
                .map(|i| if bits == 32 { i } else { i & ((1 << bits) - 1) })
                .collect();
            let h = ConcatenatedHash::new(size, indices);
            let s = encode_hash(&h);
            prop_assert_eq!(s.len(), h.num_tables() * usize::from(size) * 2);
            let back = decode_hash(&s, size, h.num_tables()).unwrap();
            prop_assert_eq!(&back, &h);
            prop_assert_eq!(encode_hash(&back), s);
        }

        #[test]
        fn probe_set_size_is_binomial_sum(bits in 1u32..=12, radius in 0u32..=4, seed in any::<u32>()) {
            let index = seed & ((1u32 << bits) - 1);
            let got = probe_set(BucketIndex { table: 0, index }, radius, bits);
            let expect: u64 = (0..=radius.min(bits)).map(|d| binomial(bits.into(), d.into())).sum();
            prop_assert_eq!(got.len() as u64, expect.min(1 << bits));
            prop_assert_eq!(got[0].index, index);
        }

        #[test]
        fn positive_scaling_preserves_hash(values in prop::collection::vec(-10.0f64..10.0, 8), c in 0.001f64..1000.0) {
            let f = family(3, 8, 8);
            let v = fv(&values);
            prop_assert_eq!(f.hash_vector(&v).unwrap(), f.hash_vector(&v.scaled(c)).unwrap());
        }
    }
}
