//! Synthetic labelled task streams: clusters on the unit sphere with a hot set
//! whose share of the stream sets the correlation level.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::lsh::FeatureVector;
use crate::packet::SimTime;

pub const LOW_CORRELATION_MIN_CLUSTERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Low,
    Moderate,
    High,
}

impl Correlation {
    /// Share of tasks drawn from the hot clusters.
    pub fn hot_fraction(self) -> f64 {
        match self {
            Correlation::High => 0.9,
            Correlation::Moderate => 0.6,
            Correlation::Low => 0.0,
        }
    }

    /// Per-coordinate noise. With dimension d the expected cosine between two
    /// members of a cluster is about 1 / (1 + d σ²).
    pub fn default_sigma(self) -> f64 {
        match self {
            Correlation::High => 0.02,
            Correlation::Moderate => 0.03,
            Correlation::Low => 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    Fixed,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub seed: u64,
    pub tasks: usize,
    pub dimension: usize,
    pub correlation: Correlation,
    pub num_clusters: usize,
    pub hot_clusters: usize,
    /// Overrides the correlation level's default noise.
    pub sigma: Option<f64>,
    pub interarrival_us: u64,
    pub arrival: Arrival,
    pub devices: usize,
    pub services: Vec<String>,
    pub similarity_threshold: f64,
    pub deadline_us: Option<u64>,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            seed: 1,
            tasks: 1_000,
            dimension: 128,
            correlation: Correlation::High,
            num_clusters: 100,
            hot_clusters: 10,
            sigma: None,
            interarrival_us: 10_000,
            arrival: Arrival::Poisson,
            devices: 10,
            services: vec!["classify".into()],
            similarity_threshold: 0.9,
            deadline_us: None,
        }
    }
}

impl WorkloadParams {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| self.correlation.default_sigma())
    }

    pub fn effective_clusters(&self) -> usize {
        match self.correlation {
            Correlation::Low => self.num_clusters.max(LOW_CORRELATION_MIN_CLUSTERS),
            _ => self.num_clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 {
            return Err(config_err("num_clusters must be at least 1"));
        }
        if self.dimension == 0 {
            return Err(config_err("dimension must be at least 1"));
        }
        if self.correlation != Correlation::Low && (self.hot_clusters == 0 || self.hot_clusters > self.num_clusters) {
            return Err(config_err(format!(
                "hot_clusters must be in 1..={}, got {}",
                self.num_clusters, self.hot_clusters
            )));
        }
        let sigma = self.sigma();
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(config_err(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        if self.tasks > 0 && (self.devices == 0 || self.services.is_empty()) {
            return Err(config_err("a non-empty workload needs at least one device and one service"));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(config_err(format!(
                "similarity_threshold {} outside [0, 1]",
                self.similarity_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub index: usize,
    pub time: SimTime,
    pub device: usize,
    pub service: String,
    /// Labelled with the generating cluster.
    pub input: FeatureVector,
    pub threshold: f64,
    pub deadline_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub centers: Vec<Vec<f64>>,
    pub tasks: Vec<TaskSpec>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn random_unit_vector(rng: &mut impl Rng, dimension: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// normalize(center + N(0, σ²) per coordinate), labelled `label`.
pub fn sample_member(rng: &mut impl Rng, center: &[f64], sigma: f64, label: u32) -> FeatureVector {
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect();
    normalize(&mut v);
    FeatureVector::new(v, label).expect("finite sample")
}

pub fn generate_workload(params: &WorkloadParams) -> Result<Workload> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let clusters = params.effective_clusters();
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| random_unit_vector(&mut rng, params.dimension))
        .collect();
    let hot = match params.correlation {
        Correlation::Low => 0,
        _ => params.hot_clusters,
    };
    let gaps = Exp::new(1.0 / params.interarrival_us.max(1) as f64).expect("positive rate");
    let sigma = params.sigma();
    let mut time = 0u64;
    let mut tasks = Vec::with_capacity(params.tasks);
    for index in 0..params.tasks {
        if index > 0 {
            time += match params.arrival {
                Arrival::Fixed => params.interarrival_us,
                Arrival::Poisson => gaps.sample(&mut rng).round() as u64,
            };
        }
        let cluster = if hot > 0 && (hot == clusters || rng.random_bool(params.correlation.hot_fraction())) {
            rng.random_range(0..hot)
        } else if hot < clusters {
            rng.random_range(hot..clusters)
        } else {
            rng.random_range(0..clusters)
        };
        let input = sample_member(&mut rng, &centers[cluster], sigma, cluster as u32);
        tasks.push(TaskSpec {
            index,
            time,
            device: rng.random_range(0..params.devices),
            service: params.services.choose(&mut rng).expect("services checked").clone(),
            input,
            threshold: params.similarity_threshold,
            deadline_us: params.deadline_us,
        });
    }
    Ok(Workload { centers, tasks })
}
