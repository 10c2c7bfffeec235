#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgatt::embedding::Calendar;
use stgatt::model::{calendar_from, ModelConfig, Signal};
use stgatt::stgraph::SpatialGraph;
use stgatt::tensor::Tensor;

pub fn ring(n: usize) -> SpatialGraph {
    let edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    SpatialGraph::from_edges(n, &edges, true).unwrap()
}

/// Daily sinusoid per node with a node-dependent phase, a slower weekly
/// swing and seeded uniform noise of amplitude `noise`.
pub fn synthetic_signal(n: usize, steps: usize, steps_per_day: usize, noise: f64, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut data = Vec::with_capacity(steps * n);
    for s in 0..steps {
        for node in 0..n {
            let phase = tau * node as f64 / n as f64;
            let day = (tau * s as f64 / steps_per_day as f64 + phase).sin();
            let week = (tau * s as f64 / (7 * steps_per_day) as f64).cos();
            data.push(50.0 + 10.0 * day + 3.0 * week + noise * rng.gen_range(-1.0..1.0));
        }
    }
    let values = Tensor::new(vec![steps, n, 1], data).unwrap();
    let first = Calendar { day_of_week: 0, step_of_day: 0 };
    Signal::new(values, calendar_from(first, steps, steps_per_day)).unwrap()
}

pub fn small_config(n: usize, horizon: usize, out_horizon: usize) -> ModelConfig {
    ModelConfig {
        n_nodes: n,
        horizon,
        out_horizon,
        channels: 1,
        d_model: 8,
        spe_rank: 2,
        steps_per_day: 24,
        n_blocks: 1,
        n_heads: 2,
        n_subsets: 2,
        seed: 7,
        learning_rate: 0.01,
        batch_size: 4,
        epochs: 3,
        clip_norm: Some(5.0),
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}
