//! Subset-local multi-head attention, the attention module and the block
//! that cycles through both partition schemes.
//!
//! Latents are `[..., NT, D]` with rows in flat element order
//! (`time * N + node`); any leading axes are treated as batch.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::embedding::NORM_EPS;
use crate::error::{Error, Result};
use crate::partition::PartitionScheme;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct HeadParams {
    /// `D × D/H'`, no bias.
    pub value_w: ParamId,
    pub query_w: ParamId,
    pub query_b: ParamId,
    /// No bias: a key bias adds `q · b` to a whole score row, which the
    /// row softmax removes.
    pub key_w: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `D × D`, applied to the concatenated heads.
    pub output_w: ParamId,
    pub d_model: usize,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::contract(format!(
                "model width {d_model} is not divisible by head count {n_heads}"
            )));
        }
        let dh = d_model / n_heads;
        let heads = (0..n_heads)
            .map(|h| HeadParams {
                value_w: store.add_glorot(format!("{prefix}.head{h}.value.w"), d_model, dh, rng),
                query_w: store.add_glorot(format!("{prefix}.head{h}.query.w"), d_model, dh, rng),
                query_b: store.add_zeros(format!("{prefix}.head{h}.query.b"), &[dh]),
                key_w: store.add_glorot(format!("{prefix}.head{h}.key.w"), d_model, dh, rng),
            })
            .collect();
        Ok(Self {
            heads,
            output_w: store.add_glorot(format!("{prefix}.out.w"), d_model, d_model, rng),
            d_model,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.len()
    }
}

#[derive(Clone, Debug)]
pub struct ModuleParams {
    pub attention: AttentionParams,
    /// `D × 4D`.
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    /// `4D × D`.
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm1_scale: ParamId,
    pub norm1_shift: ParamId,
    pub norm2_scale: ParamId,
    pub norm2_shift: ParamId,
}

impl ModuleParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        let hidden = 4 * d_model;
        Ok(Self {
            attention: AttentionParams::new(store, rng, &format!("{prefix}.attn"), d_model, n_heads)?,
            ffn_w1: store.add_glorot(format!("{prefix}.ffn.w1"), d_model, hidden, rng),
            ffn_b1: store.add_zeros(format!("{prefix}.ffn.b1"), &[hidden]),
            ffn_w2: store.add_glorot(format!("{prefix}.ffn.w2"), hidden, d_model, rng),
            ffn_b2: store.add_zeros(format!("{prefix}.ffn.b2"), &[d_model]),
            norm1_scale: store.add_ones(format!("{prefix}.norm1.scale"), &[d_model]),
            norm1_shift: store.add_zeros(format!("{prefix}.norm1.shift"), &[d_model]),
            norm2_scale: store.add_ones(format!("{prefix}.norm2.scale"), &[d_model]),
            norm2_shift: store.add_zeros(format!("{prefix}.norm2.shift"), &[d_model]),
        })
    }
}

/// Two modules with independent parameters: the first runs on P1, the second on P2.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub first: ModuleParams,
    pub second: ModuleParams,
}

impl BlockParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            first: ModuleParams::new(store, rng, &format!("{prefix}.m1"), d_model, n_heads)?,
            second: ModuleParams::new(store, rng, &format!("{prefix}.m2"), d_model, n_heads)?,
        })
    }
}

fn check_rows(shape: &[usize], d_model: usize) -> Result<usize> {
    match shape {
        [.., m, d] if *d == d_model && *m > 0 => Ok(*m),
        [.., 0, _] => Err(Error::contract("attention over an empty subset")),
        _ => Err(Error::Dimension {
            op: "attention",
            lhs: shape.to_vec(),
            rhs: vec![d_model],
        }),
    }
}

/// All-pairs attention among the `m` rows of `x` (`[..., m, D]`).
pub fn subset_attention(tape: &mut Tape, store: &ParamStore, params: &AttentionParams, x: Var) -> Result<Var> {
    check_rows(tape.value(x).shape(), params.d_model)?;
    let inv_sqrt = 1.0 / (params.head_dim() as f64).sqrt();
    let mut outputs = Vec::with_capacity(params.n_heads());
    for head in &params.heads {
        let wv = tape.param(store, head.value_w);
        let wq = tape.param(store, head.query_w);
        let bq = tape.param(store, head.query_b);
        let wk = tape.param(store, head.key_w);
        let v = tape.linear(x, wv, None)?;
        let q = tape.linear(x, wq, Some(bq))?;
        let k = tape.linear(x, wk, None)?;
        let kt = tape.transpose_last2(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, inv_sqrt);
        let alpha = tape.softmax_rows(scores)?;
        outputs.push(tape.matmul(alpha, v)?);
    }
    let rank = tape.value(x).rank();
    let joined = tape.concat(&outputs, rank - 1)?;
    let wo = tape.param(store, params.output_w);
    tape.matmul(joined, wo)
}

/// Attention weights `[m, m]` per head for the rows of `x` (`[m, D]`),
/// evaluated without recording gradients.
pub fn attention_weights(store: &ParamStore, params: &AttentionParams, x: &Tensor) -> Result<Vec<Tensor>> {
    if x.rank() != 2 {
        return Err(Error::contract("attention_weights expects an m × D matrix"));
    }
    check_rows(x.shape(), params.d_model)?;
    let inv_sqrt = 1.0 / (params.head_dim() as f64).sqrt();
    params
        .heads
        .iter()
        .map(|head| {
            let value = |id: ParamId| &store.get(id).value;
            let q = x.matmul(value(head.query_w))?.add(value(head.query_b))?;
            let k = x.matmul(value(head.key_w))?;
            q.matmul(&k.transpose_last2()?)?.scale(inv_sqrt).softmax_rows()
        })
        .collect()
}

/// Partition → attention per subset → merge, then the residual/norm and
/// feed-forward/norm steps. `x` is `[..., NT, D]`.
pub fn apply_module(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModuleParams,
    x: Var,
    scheme: &PartitionScheme,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let rows = check_rows(&shape, params.attention.d_model)?;
    if rows != scheme.n_elements() {
        return Err(Error::contract(format!(
            "latent has {rows} elements, {} scheme covers {}",
            scheme.label(),
            scheme.n_elements()
        )));
    }
    let row_axis = shape.len() - 2;
    let mut parts = Vec::with_capacity(scheme.n_subsets());
    for subset in scheme.subsets() {
        let members = tape.gather_rows(x, subset)?;
        parts.push(subset_attention(tape, store, &params.attention, members)?);
    }
    let stacked = tape.concat(&parts, row_axis)?;
    // Row k of `stacked` is element order[k]; invert to restore element order.
    let order = scheme.concatenated();
    let mut position = vec![0usize; order.len()];
    for (k, &e) in order.iter().enumerate() {
        position[e] = k;
    }
    let merged = tape.gather_rows(stacked, &position)?;

    let residual = tape.add(x, merged)?;
    let s1 = tape.param(store, params.norm1_scale);
    let h1 = tape.param(store, params.norm1_shift);
    let y = tape.layer_norm(residual, s1, h1, NORM_EPS)?;

    let w1 = tape.param(store, params.ffn_w1);
    let b1 = tape.param(store, params.ffn_b1);
    let w2 = tape.param(store, params.ffn_w2);
    let b2 = tape.param(store, params.ffn_b2);
    let hidden = tape.linear(y, w1, Some(b1))?;
    let hidden = tape.relu(hidden);
    let ffn = tape.linear(hidden, w2, Some(b2))?;
    let residual = tape.add(y, ffn)?;
    let s2 = tape.param(store, params.norm2_scale);
    let h2 = tape.param(store, params.norm2_shift);
    tape.layer_norm(residual, s2, h2, NORM_EPS)
}

/// The first module on `p1`, then the second on `p2`.
pub fn apply_block(
    tape: &mut Tape,
    store: &ParamStore,
    params: &BlockParams,
    x: Var,
    p1: &PartitionScheme,
    p2: &PartitionScheme,
) -> Result<Var> {
    if p1.n_elements() != p2.n_elements() {
        return Err(Error::contract("block schemes cover different element sets"));
    }
    let y = apply_module(tape, store, &params.first, x, p1)?;
    apply_module(tape, store, &params.second, y, p2)
}
