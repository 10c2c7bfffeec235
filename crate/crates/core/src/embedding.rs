//! Input embedding: a linear lift of the raw signal, plus spatial (Laplacian
//! eigenvector) and temporal (day-of-week / step-of-day) position
//! embeddings, followed by a second linear map and layer normalisation.
//!
//! Latent tensors use element-major layout `[batch, N*T, D]`, row
//! `time * N + node`, matching [`crate::stgraph::UnifiedGraph::flat`].

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::stgraph::SpatialGraph;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
/// Eigenvalues below this are treated as null (one per connected component).
pub const TRIVIAL_EIGENVALUE: f64 = 1e-8;
const ISOLATED_DEGREE: f64 = 1e-12;

/// Spectral decomposition of the symmetric normalised Laplacian and the
/// selected position coordinates.
#[derive(Clone, Debug)]
pub struct SpePack {
    pub laplacian: Tensor,
    /// Ascending eigenvalues.
    pub eigvals: Vec<f64>,
    /// Column `k` is the eigenvector of `eigvals[k]`.
    pub eigvecs: Tensor,
    /// `N × R`: the R smallest non-trivial eigenvectors, sign-fixed.
    pub selected: Tensor,
    /// Indices into `eigvals` of the selected columns.
    pub selected_index: Vec<usize>,
}

impl SpePack {
    /// Node coordinates (one row per node) for clustering.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let r = self.selected.shape()[1];
        self.selected.data().chunks(r.max(1)).map(|c| c[..r].to_vec()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// `L = I − D^{-1/2} A D^{-1/2}` with weighted degrees; isolated nodes get a
/// tiny degree so their row of the normalised adjacency is zero.
pub fn normalized_laplacian(g: &SpatialGraph) -> Tensor {
    let n = g.n_nodes();
    let mut a = g.adjacency().to_vec();
    if !g.is_symmetric() {
        warn!("adjacency is asymmetric; symmetrising for the Laplacian");
        for i in 0..n {
            for j in i + 1..n {
                let w = a[i * n + j].max(a[j * n + i]);
                a[i * n + j] = w;
                a[j * n + i] = w;
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a[i * n..(i + 1) * n].iter().sum();
            1.0 / if d > 0.0 { d } else { ISOLATED_DEGREE }.sqrt()
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let identity = if i == j { 1.0 } else { 0.0 };
            l[i * n + j] = identity - inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
        }
    }
    Tensor::new(vec![n, n], l).expect("square laplacian")
}

/// Flips a vector so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn compute_spe(g: &SpatialGraph, r: usize) -> Result<SpePack> {
    let n = g.n_nodes();
    if r >= n {
        return Err(Error::contract(format!("eigenvector count R={r} must be < N={n}")));
    }
    let laplacian = normalized_laplacian(g);
    let m = DMatrix::from_row_slice(n, n, laplacian.data());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let eigvals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut columns: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    for c in &mut columns {
        fix_sign(c);
    }
    let mut eigvecs = vec![0.0; n * n];
    for (k, c) in columns.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            eigvecs[i * n + k] = *v;
        }
    }

    let selected_index: Vec<usize> = (0..n)
        .filter(|&k| eigvals[k] >= TRIVIAL_EIGENVALUE)
        .take(r)
        .collect();
    if selected_index.len() < r {
        warn!(
            "only {} non-trivial eigenvectors available for R={r}; padding with zeros",
            selected_index.len()
        );
    }
    let mut selected = vec![0.0; n * r];
    for (c, &k) in selected_index.iter().enumerate() {
        for i in 0..n {
            selected[i * r + c] = columns[k][i];
        }
    }
    Ok(SpePack {
        laplacian,
        eigvals,
        eigvecs: Tensor::new(vec![n, n], eigvecs)?,
        selected: Tensor::new(vec![n, r], selected)?,
        selected_index,
    })
}

/// Calendar position of one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Calendar {
    /// Monday = 0.
    pub day_of_week: usize,
    pub step_of_day: usize,
}

/// Raw input window: values `[N, T, C]` and per-step calendar indices.
#[derive(Clone, Debug)]
pub struct SignalWindow {
    pub values: Tensor,
    pub calendar: Vec<Calendar>,
}

impl SignalWindow {
    pub fn new(values: Tensor, calendar: Vec<Calendar>) -> Result<Self> {
        if values.rank() != 3 || values.shape()[1] != calendar.len() {
            return Err(Error::Dimension {
                op: "signal window",
                lhs: values.shape().to_vec(),
                rhs: vec![calendar.len()],
            });
        }
        Ok(Self { values, calendar })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Learnable parts of the embedding layer.
#[derive(Clone, Debug)]
pub struct EmbeddingParams {
    pub input_w: ParamId,
    pub input_b: ParamId,
    pub mix_w: ParamId,
    pub mix_b: ParamId,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    /// `R → D`.
    pub spe_proj: ParamId,
    /// `(7 + γ) → D`; rows 0..7 are days, the rest steps of day.
    pub tpe_proj: ParamId,
    pub channels: usize,
    pub d_model: usize,
    pub steps_per_day: usize,
}

impl EmbeddingParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        channels: usize,
        d_model: usize,
        spe_rank: usize,
        steps_per_day: usize,
    ) -> Self {
        Self {
            input_w: store.add_glorot("embed.input.w", channels, d_model, rng),
            input_b: store.add_zeros("embed.input.b", &[d_model]),
            mix_w: store.add_glorot("embed.mix.w", d_model, d_model, rng),
            mix_b: store.add_zeros("embed.mix.b", &[d_model]),
            norm_scale: store.add_ones("embed.norm.scale", &[d_model]),
            norm_shift: store.add_zeros("embed.norm.shift", &[d_model]),
            spe_proj: store.add_glorot("embed.spe.w", spe_rank, d_model, rng),
            tpe_proj: store.add_glorot("embed.tpe.w", 7 + steps_per_day, d_model, rng),
            channels,
            d_model,
            steps_per_day,
        }
    }
}

/// One-hot rows (into the TPE projection) for each step of a window.
pub fn tpe_rows(calendar: &[Calendar], steps_per_day: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut days = Vec::with_capacity(calendar.len());
    let mut steps = Vec::with_capacity(calendar.len());
    for c in calendar {
        if c.day_of_week >= 7 || c.step_of_day >= steps_per_day {
            return Err(Error::contract(format!(
                "calendar index out of range: day {} step {} (steps per day {steps_per_day})",
                c.day_of_week, c.step_of_day
            )));
        }
        days.push(c.day_of_week);
        steps.push(7 + c.step_of_day);
    }
    Ok((days, steps))
}

/// Temporal position embedding `[T, D]`: concat(one-hot day, one-hot step)
/// times the projection, realised as a sum of two selected rows.
pub fn compute_tpe(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbeddingParams,
    calendar: &[Calendar],
) -> Result<Var> {
    let (days, steps) = tpe_rows(calendar, params.steps_per_day)?;
    let w = tape.param(store, params.tpe_proj);
    let d = tape.gather_rows(w, &days)?;
    let s = tape.gather_rows(w, &steps)?;
    tape.add(d, s)
}

/// Spatial position embedding `[N, D]`.
pub fn compute_spe_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbeddingParams,
    spe: &SpePack,
) -> Result<Var> {
    let coords = tape.constant(spe.selected.clone());
    let w = tape.param(store, params.spe_proj);
    tape.matmul(coords, w)
}

/// Embeds a batch of windows into `[B, N*T, D]`.
pub fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbeddingParams,
    spe: &SpePack,
    windows: &[&SignalWindow],
) -> Result<Var> {
    let first = windows
        .first()
        .ok_or_else(|| Error::contract("embed needs at least one window"))?;
    let (n, t, c) = (first.n_nodes(), first.horizon(), first.channels());
    if c != params.channels || spe.selected.shape()[0] != n {
        return Err(Error::Dimension {
            op: "embed",
            lhs: first.values.shape().to_vec(),
            rhs: vec![spe.selected.shape()[0], params.channels],
        });
    }
    let b = windows.len();
    let mut raw = Vec::with_capacity(b * n * t * c);
    let mut tpe_index_day = Vec::with_capacity(b * n * t);
    let mut tpe_index_step = Vec::with_capacity(b * n * t);
    for w in windows {
        if w.values.shape() != first.values.shape() {
            return Err(Error::Dimension {
                op: "embed",
                lhs: first.values.shape().to_vec(),
                rhs: w.values.shape().to_vec(),
            });
        }
        // [N, T, C] -> element-major [T*N, C]
        raw.extend_from_slice(w.values.permute(&[1, 0, 2])?.data());
        let (days, steps) = tpe_rows(&w.calendar, params.steps_per_day)?;
        for time in 0..t {
            for _ in 0..n {
                tpe_index_day.push(days[time]);
                tpe_index_step.push(steps[time]);
            }
        }
    }
    let x = tape.constant(Tensor::new(vec![b, n * t, c], raw)?);
    let w_in = tape.param(store, params.input_w);
    let b_in = tape.param(store, params.input_b);
    let lifted = tape.linear(x, w_in, Some(b_in))?;

    // SPE broadcast over time: element row time*N+node takes SPE row node.
    let spe_rows = compute_spe_embedding(tape, store, params, spe)?;
    let node_index: Vec<usize> = (0..n * t).map(|e| e % n).collect();
    let spe_full = tape.gather_rows(spe_rows, &node_index)?;

    // TPE broadcast over nodes, per window.
    let tpe_w = tape.param(store, params.tpe_proj);
    let day_rows = tape.gather_rows(tpe_w, &tpe_index_day)?;
    let step_rows = tape.gather_rows(tpe_w, &tpe_index_step)?;
    let tpe = tape.add(day_rows, step_rows)?;
    let tpe = tape.reshape(tpe, &[b, n * t, params.d_model])?;

    let summed = tape.add(lifted, spe_full)?;
    let summed = tape.add(summed, tpe)?;
    let w_mix = tape.param(store, params.mix_w);
    let b_mix = tape.param(store, params.mix_b);
    let mixed = tape.linear(summed, w_mix, Some(b_mix))?;
    let scale = tape.param(store, params.norm_scale);
    let shift = tape.param(store, params.norm_shift);
    tape.layer_norm(mixed, scale, shift, NORM_EPS)
}

/// Element-major `[N*T, D]` rows to node-major `[N, T, D]`.
pub fn to_node_major(t: &Tensor, n: usize, horizon: usize) -> Result<Tensor> {
    let d = t.shape()[t.rank() - 1];
    t.reshape(&[horizon, n, d])?.permute(&[1, 0, 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_node_spectrum() {
        let g = SpatialGraph::from_edges(2, &[(0, 1, 1.0)], true).unwrap();
        let spe = compute_spe(&g, 1).unwrap();
        assert!(spe.eigvals[0].abs() < 1e-12);
        assert!((spe.eigvals[1] - 2.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((spe.selected.data()[0] - h).abs() < 1e-12);
        assert!((spe.selected.data()[1] + h).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_spectrum() {
        let g = SpatialGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], true).unwrap();
        let spe = compute_spe(&g, 2).unwrap();
        assert!((spe.eigvals[1] - 1.5).abs() < 1e-12);
        assert!((spe.eigvals[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rank_must_be_below_node_count() {
        let g = SpatialGraph::from_edges(2, &[(0, 1, 1.0)], true).unwrap();
        assert!(matches!(compute_spe(&g, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn trivial_modes_skipped_per_component() {
        // Two disjoint edges: two null modes.
        let g = SpatialGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)], true).unwrap();
        let spe = compute_spe(&g, 2).unwrap();
        assert_eq!(spe.selected_index, vec![2, 3]);
    }

    #[test]
    fn tpe_rejects_out_of_range() {
        let cal = [Calendar {
            day_of_week: 7,
            step_of_day: 0,
        }];
        assert!(tpe_rows(&cal, 288).is_err());
        let cal = [Calendar {
            day_of_week: 0,
            step_of_day: 288,
        }];
        assert!(tpe_rows(&cal, 288).is_err());
    }

    #[test]
    fn tpe_zero_weights_and_equal_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let params = EmbeddingParams::new(&mut store, &mut rng, 1, 4, 1, 288);
        let cal = vec![
            Calendar { day_of_week: 0, step_of_day: 1 },
            Calendar { day_of_week: 3, step_of_day: 100 },
            Calendar { day_of_week: 0, step_of_day: 1 },
        ];
        let mut tape = Tape::new();
        let tpe = compute_tpe(&mut tape, &store, &params, &cal).unwrap();
        let v = tape.value(tpe);
        assert_eq!(v.shape(), &[3, 4]);
        assert_eq!(v.data()[0..4], v.data()[8..12]);
        assert_ne!(v.data()[0..4], v.data()[4..8]);

        store.get_mut(params.tpe_proj).value.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let tpe = compute_tpe(&mut tape, &store, &params, &cal).unwrap();
        assert!(tape.value(tpe).data().iter().all(|&x| x == 0.0));
    }
}
