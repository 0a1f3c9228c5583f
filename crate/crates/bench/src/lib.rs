//! Shared fixtures for the criterion benchmarks.

use tvt_core::batch::BatchSource;
use tvt_core::model::{random_teacher, TeacherConfig};
use tvt_core::search::sample_for_seed;
use tvt_core::{Genome, ProxyConfig, ProxyContext, Rng, SearchSpaceSpec, Tensor};

/// Standard-normal tensor with a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.standard_normal() as f32)
}

pub fn space(name: &str) -> SearchSpaceSpec {
    SearchSpaceSpec::bundled(name).expect("bundled space")
}

pub fn genomes(space: &SearchSpaceSpec, n: usize, seed: u64) -> Vec<Genome> {
    sample_for_seed(space, n, seed).expect("feasible space")
}

/// Scoring context for a space: seeded compact teacher and a synthetic batch.
pub fn context(space: &SearchSpaceSpec, batch: usize) -> ProxyContext {
    let teacher = random_teacher(&TeacherConfig::resnet_small(space.in_channels, space.image_size), 0)
        .expect("teacher");
    let cfg = ProxyConfig {
        batch: BatchSource::Synthetic { size: batch, seed: 0 },
        ..ProxyConfig::default()
    };
    let x = cfg.batch.materialize(space.in_channels, space.image_size).expect("batch");
    ProxyContext::new(&teacher, x, cfg).expect("context")
}

/// Scores with a fixed share of ties, as in quantized accuracy tables.
pub fn ranked_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.unit()).collect();
    let y = x.iter().map(|v| ((v + 0.3 * rng.unit()) * 50.0).round()).collect();
    (x, y)
}
