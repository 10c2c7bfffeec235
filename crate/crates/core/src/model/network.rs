use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{apply_block, apply_module, attention_weights, BlockParams};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::embedding::{compute_spe, embed, EmbeddingParams, SignalWindow, SpePack};
use crate::error::{Error, Result};
use crate::partition::{build_schemes, select_base_nodes, PartitionScheme};
use crate::stgraph::{SpatialGraph, UnifiedGraph};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::data::{NormStats, Sample};

/// Maps the latent `[B, NT, D]` to `[B, N, T', C]`: a temporal map per node
/// and feature, then a feature map per element.
#[derive(Clone, Debug)]
pub struct AdapterParams {
    /// `T' × T`.
    pub temporal_w: ParamId,
    /// `D`.
    pub temporal_b: ParamId,
    /// `D × C`.
    pub feature_w: ParamId,
    /// `C`.
    pub feature_b: ParamId,
}

impl AdapterParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: &ModelConfig) -> Self {
        Self {
            temporal_w: store.add_glorot("adapter.temporal.w", config.out_horizon, config.horizon, rng),
            temporal_b: store.add_zeros("adapter.temporal.b", &[config.d_model]),
            feature_w: store.add_glorot("adapter.feature.w", config.d_model, config.channels, rng),
            feature_b: store.add_zeros("adapter.feature.b", &[config.channels]),
        }
    }
}

/// The full forecaster. Partition schemes are fixed at construction.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embedding: EmbeddingParams,
    pub blocks: Vec<BlockParams>,
    pub adapter: AdapterParams,
    pub spe: SpePack,
    pub graph: UnifiedGraph,
    pub p1: PartitionScheme,
    pub p2: PartitionScheme,
    /// Normalisation of the training split; unset until trained.
    pub norm: Option<NormStats>,
    pub epochs_completed: usize,
}

impl ForecastModel {
    /// Builds the embeddings and both partition schemes from `graph`, and
    /// initialises parameters from `config.seed`.
    pub fn new(config: ModelConfig, graph: &SpatialGraph) -> Result<Self> {
        config.validate()?;
        check_graph(&config, graph)?;
        let spe = compute_spe(graph, config.spe_rank)?;
        let ug = UnifiedGraph::build(graph, config.horizon)?;
        let bases = select_base_nodes(&spe.rows(), config.n_subsets, config.seed)?;
        let (p1, p2) = build_schemes(&ug, &bases)?;
        Self::assemble(config, spe, ug, p1, p2)
    }

    /// Like [`ForecastModel::new`] but with given schemes, as when loading.
    pub fn with_schemes(
        config: ModelConfig,
        graph: &SpatialGraph,
        p1: PartitionScheme,
        p2: PartitionScheme,
    ) -> Result<Self> {
        config.validate()?;
        check_graph(&config, graph)?;
        let spe = compute_spe(graph, config.spe_rank)?;
        let ug = UnifiedGraph::build(graph, config.horizon)?;
        for p in [&p1, &p2] {
            if p.n_elements() != ug.n_elements() {
                return Err(Error::contract("partition scheme does not match the graph"));
            }
        }
        Self::assemble(config, spe, ug, p1, p2)
    }

    fn assemble(
        config: ModelConfig,
        spe: SpePack,
        graph: UnifiedGraph,
        p1: PartitionScheme,
        p2: PartitionScheme,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embedding = EmbeddingParams::new(
            &mut store,
            &mut rng,
            config.channels,
            config.d_model,
            config.spe_rank,
            config.steps_per_day,
        );
        let blocks = (0..config.n_blocks)
            .map(|b| BlockParams::new(&mut store, &mut rng, &format!("block{b}"), config.d_model, config.n_heads))
            .collect::<Result<Vec<_>>>()?;
        let adapter = AdapterParams::new(&mut store, &mut rng, &config);
        Ok(Self {
            config,
            store,
            embedding,
            blocks,
            adapter,
            spe,
            graph,
            p1,
            p2,
            norm: None,
            epochs_completed: 0,
        })
    }

    fn check_windows(&self, windows: &[&SignalWindow]) -> Result<()> {
        let expected = [self.config.n_nodes, self.config.horizon, self.config.channels];
        if windows.is_empty() {
            return Err(Error::contract("forward needs at least one window"));
        }
        for w in windows {
            if w.values.shape() != expected {
                return Err(Error::Dimension {
                    op: "forward",
                    lhs: w.values.shape().to_vec(),
                    rhs: expected.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Latent `[B, NT, D]` after the embedding and the first `blocks` blocks.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, windows: &[&SignalWindow], blocks: usize) -> Result<Var> {
        self.check_windows(windows)?;
        let mut h = embed(tape, store, &self.embedding, &self.spe, windows)?;
        for block in self.blocks.iter().take(blocks) {
            h = apply_block(tape, store, block, h, &self.p1, &self.p2)?;
        }
        Ok(h)
    }

    /// Adapter from a latent `[B, NT, D]` to normalised predictions `[B, N, T', C]`.
    pub fn adapt(&self, tape: &mut Tape, store: &ParamStore, latent: Var) -> Result<Var> {
        let c = &self.config;
        let b = tape.value(latent).shape()[0];
        let (n, t, t_out, d) = (c.n_nodes, c.horizon, c.out_horizon, c.d_model);
        let h = tape.reshape(latent, &[b, t, n * d])?;
        let w1 = tape.param(store, self.adapter.temporal_w);
        let h = tape.matmul(w1, h)?;
        let h = tape.reshape(h, &[b, t_out, n, d])?;
        let b1 = tape.param(store, self.adapter.temporal_b);
        let h = tape.add(h, b1)?;
        let w2 = tape.param(store, self.adapter.feature_w);
        let b2 = tape.param(store, self.adapter.feature_b);
        let y = tape.linear(h, w2, Some(b2))?;
        tape.permute(y, &[0, 2, 1, 3])
    }

    /// Normalised predictions `[B, N, T', C]` for a batch of windows.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, windows: &[&SignalWindow]) -> Result<Var> {
        let latent = self.encode(tape, store, windows, self.blocks.len())?;
        self.adapt(tape, store, latent)
    }

    /// Maps normalised outputs back to signal units.
    pub fn denormalize(&self, tape: &mut Tape, pred: Var, stats: &NormStats) -> Result<Var> {
        let std = tape.constant(Tensor::new(vec![stats.std.len()], stats.std.clone())?);
        let mean = tape.constant(Tensor::new(vec![stats.mean.len()], stats.mean.clone())?);
        let scaled = tape.mul(pred, std)?;
        tape.add(scaled, mean)
    }

    /// De-normalised predictions and the masked MAE against the raw targets.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        samples: &[&Sample],
        stats: &NormStats,
    ) -> Result<(Var, Var)> {
        let windows: Vec<&SignalWindow> = samples.iter().map(|s| &s.input).collect();
        let pred = self.forward(tape, store, &windows)?;
        let pred = self.denormalize(tape, pred, stats)?;
        let parts: Vec<&Tensor> = samples.iter().map(|s| &s.target).collect();
        let truth = Tensor::concat(&parts, 0)?.reshape(tape.value(pred).shape())?;
        let loss = tape.masked_mae(pred, &truth)?;
        Ok((pred, loss))
    }

    /// De-normalised predictions `[B, N, T', C]` without recording gradients.
    pub fn predict(&self, windows: &[&SignalWindow], stats: &NormStats) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pred = self.forward(&mut tape, &self.store, windows)?;
        let pred = self.denormalize(&mut tape, pred, stats)?;
        Ok(tape.value(pred).clone())
    }

    pub fn scheme(&self, module: usize) -> Result<&PartitionScheme> {
        match module {
            1 => Ok(&self.p1),
            2 => Ok(&self.p2),
            _ => Err(Error::contract(format!("module must be 1 or 2, got {module}"))),
        }
    }

    /// Attention weights of `query` over the members of its subset, at the
    /// given block (0-based) and module (1 = P1, 2 = P2). Heads are averaged
    /// unless one is named. Returns `(element, alpha)` in subset order.
    pub fn attention_row(
        &self,
        window: &SignalWindow,
        block: usize,
        module: usize,
        query: usize,
        head: Option<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        let params = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::contract(format!("block {block} out of range (model has {})", self.blocks.len())))?;
        let scheme = self.scheme(module)?;
        if query >= scheme.n_elements() {
            return Err(Error::contract(format!("query element {query} out of range")));
        }
        let mut tape = Tape::new();
        let mut h = self.encode(&mut tape, &self.store, &[window], block)?;
        let module_params = if module == 1 {
            &params.first
        } else {
            h = apply_module(&mut tape, &self.store, &params.first, h, &self.p1)?;
            &params.second
        };
        let latent = tape.value(h);
        let d = self.config.d_model;
        let latent = latent.reshape(&[latent.len() / d, d])?;
        let subset = &scheme.subsets()[scheme.subset_of(query)];
        let rows = latent.gather_rows(subset)?;
        let alphas = attention_weights(&self.store, &module_params.attention, &rows)?;
        let q = subset.iter().position(|&e| e == query).expect("query is in its subset");
        let m = subset.len();
        let weights: Vec<f64> = match head {
            Some(k) => {
                let alpha = alphas
                    .get(k)
                    .ok_or_else(|| Error::contract(format!("head {k} out of range")))?;
                alpha.data()[q * m..(q + 1) * m].to_vec()
            }
            None => (0..m)
                .map(|j| alphas.iter().map(|a| a.data()[q * m + j]).sum::<f64>() / alphas.len() as f64)
                .collect(),
        };
        Ok(subset.iter().copied().zip(weights).collect())
    }
}

fn check_graph(config: &ModelConfig, graph: &SpatialGraph) -> Result<()> {
    if graph.n_nodes() != config.n_nodes {
        return Err(Error::contract(format!(
            "config has {} nodes, graph has {}",
            config.n_nodes,
            graph.n_nodes()
        )));
    }
    Ok(())
}
