//! Finite-difference checks of the embedding, one block and the whole model
//! on a four-node ring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{apply_block, BlockParams};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::embedding::{embed, Calendar, EmbeddingParams, SignalWindow};
use crate::error::Result;
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::stgraph::SpatialGraph;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::data::{NormStats, Sample};
use super::network::ForecastModel;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// N=4, T=4, T'=2, D=8, one block, two heads, two subsets.
pub fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_nodes: 4,
        horizon: 4,
        out_horizon: 2,
        channels: 1,
        d_model: 8,
        spe_rank: 2,
        steps_per_day: 6,
        n_blocks: 1,
        n_heads: 2,
        n_subsets: 2,
        seed,
        ..ModelConfig::default()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Moves every bias, shift and scale off its initial value so their
/// gradients are exercised.
fn perturb(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let offset = if p.name.ends_with("scale") { 1.0 } else { 0.0 };
        if p.name.ends_with("scale") || p.name.ends_with("shift") || p.name.ends_with(".b") || p.name.ends_with("b1") || p.name.ends_with("b2") {
            for v in p.value.data_mut() {
                *v = offset + rng.gen_range(-0.3..0.3);
            }
        }
    }
}

/// Weighted sum `Σ w ⊙ y`, so that layer-normalised outputs do not give a
/// constant objective.
fn probe(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

/// Runs the three checks and returns them labelled `embed`, `block`, `model`.
pub fn toy_gradient_checks(seed: u64, coords: usize) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let config = toy_config(seed);
    let edges: Vec<(usize, usize, f64)> = (0..4).map(|i| (i, (i + 1) % 4, 1.0)).collect();
    let graph = SpatialGraph::from_edges(4, &edges, true)?;
    let mut model = ForecastModel::new(config.clone(), &graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    perturb(&mut model.store, &mut rng);

    let (n, t, d) = (config.n_nodes, config.horizon, config.d_model);
    let windows: Vec<SignalWindow> = (0..2)
        .map(|b| {
            let calendar = (0..t)
                .map(|k| Calendar { day_of_week: (b + k) % 7, step_of_day: (2 * b + k) % config.steps_per_day })
                .collect();
            SignalWindow::new(random(&mut rng, &[n, t, 1]), calendar)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&SignalWindow> = windows.iter().collect();
    let mut reports = Vec::with_capacity(3);

    let weights = random(&mut rng, &[2, n * t, d]);
    let mut store = ParamStore::new();
    let embedding = EmbeddingParams::new(&mut store, &mut rng, 1, d, config.spe_rank, config.steps_per_day);
    perturb(&mut store, &mut rng);
    let spe = model.spe.clone();
    reports.push((
        "embed",
        finite_diff_check(
            &mut store,
            |tape, store| {
                let z = embed(tape, store, &embedding, &spe, &refs)?;
                probe(tape, z, &weights)
            },
            GRADCHECK_STEP,
            coords,
            seed,
        )?,
    ));

    let latent = random(&mut rng, &[2, n * t, d]);
    let mut store = ParamStore::new();
    let block = BlockParams::new(&mut store, &mut rng, "block", d, config.n_heads)?;
    perturb(&mut store, &mut rng);
    let (p1, p2) = (model.p1.clone(), model.p2.clone());
    reports.push((
        "block",
        finite_diff_check(
            &mut store,
            |tape, store| {
                let x = tape.constant(latent.clone());
                let y = apply_block(tape, store, &block, x, &p1, &p2)?;
                probe(tape, y, &weights)
            },
            GRADCHECK_STEP,
            coords,
            seed,
        )?,
    ));

    let stats = NormStats { mean: vec![0.5], std: vec![2.0] };
    let samples: Vec<Sample> = windows
        .iter()
        .enumerate()
        .map(|(k, w)| Sample {
            start: k,
            input: w.clone(),
            target: random(&mut rng, &[n, config.out_horizon, 1]).map(|v| 3.0 * v),
        })
        .collect();
    let sample_refs: Vec<&Sample> = samples.iter().collect();
    let net = model.clone();
    reports.push((
        "model",
        finite_diff_check(
            &mut model.store,
            |tape, store| Ok(net.loss(tape, store, &sample_refs, &stats)?.1),
            GRADCHECK_STEP,
            coords,
            seed,
        )?,
    ));
    Ok(reports)
}
