//! Seeded instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgd_dag::{ClusterSpec, IterationProfile, LayerProfile, WorkloadSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Duration in `[lo, hi]`, exactly zero one time in ten when `lo` is zero.
pub fn duration<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == 0.0 && rng.random_bool(0.1) {
        0.0
    } else {
        rng.random_range(lo..=hi)
    }
}

pub struct ProfileShape {
    pub max_layers: usize,
    pub lo: f64,
    pub hi: f64,
    /// Probability that a layer above the first carries no gradients.
    pub non_learnable: f64,
}

impl Default for ProfileShape {
    fn default() -> Self {
        ProfileShape { max_layers: 60, lo: 0.0, hi: 1e7, non_learnable: 0.3 }
    }
}

/// Random profile with `t_u = 0`; layer 1 always carries gradients.
pub fn profile<R: Rng>(rng: &mut R, shape: &ProfileShape) -> IterationProfile {
    let layers = rng.random_range(1..=shape.max_layers);
    let layer_profiles = (1..=layers)
        .map(|id| {
            let learnable = id == 1 || !rng.random_bool(shape.non_learnable);
            let forward = duration(rng, shape.lo, shape.hi);
            let backward = duration(rng, shape.lo, shape.hi);
            let (comm, bytes) = if learnable {
                (duration(rng, shape.lo, shape.hi), rng.random_range(1..=100_000_000u64))
            } else {
                (0.0, 0)
            };
            LayerProfile::new(id, format!("layer{id}"), forward, backward, comm, bytes)
        })
        .collect();
    let io = duration(rng, shape.lo, shape.hi);
    let h2d = duration(rng, shape.lo, shape.hi);
    IterationProfile::new(io, h2d, layer_profiles, 0.0).validate().expect("generated profile is valid")
}

pub fn cluster(machines: usize, gpus_per_machine: usize) -> ClusterSpec {
    ClusterSpec::new(machines, gpus_per_machine, 1.1e9, 15e9, 1.25e9, 15e9).unwrap()
}

pub fn workload_for(profile: &IterationProfile) -> WorkloadSpec {
    WorkloadSpec::new(profile.layers(), 32, 150_528).unwrap()
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
