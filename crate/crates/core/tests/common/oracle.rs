use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stgatt::attention::{AttentionParams, ModuleParams};
use stgatt::autodiff::{ParamId, ParamStore, Tape, Var};
use stgatt::partition::PartitionScheme;
use stgatt::stgraph::{SpatialGraph, StCoord, UnifiedGraph};
use stgatt::tensor::Tensor;

pub type Matrix = Vec<Vec<f64>>;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn matrix(t: &Tensor) -> Matrix {
    let cols = t.shape()[t.rank() - 1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn vector(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.get(id).value.data().to_vec()
}

/// Randomises every bias so the oracle exercises them.
pub fn perturb_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        if p.name.ends_with(".b") || p.name.ends_with(".b1") || p.name.ends_with(".b2") || p.name.ends_with("shift") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        if p.name.ends_with("scale") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
        }
    }
}

/// Direct loop transcription of multi-head attention over the rows of `x`.
pub fn attention_oracle(store: &ParamStore, params: &AttentionParams, x: &Matrix) -> Matrix {
    let m = x.len();
    let d = params.d_model;
    let dh = params.head_dim();
    let mut joined = vec![vec![0.0; d]; m];
    for (h, head) in params.heads.iter().enumerate() {
        let w1 = matrix(&store.get(head.value_w).value);
        let w2 = matrix(&store.get(head.query_w).value);
        let b2 = vector(store, head.query_b);
        let w3 = matrix(&store.get(head.key_w).value);
        // Any key bias shifts a score row by a constant; the oracle keeps one
        // to confirm the softmax cancels it.
        let b3: Vec<f64> = (0..dh).map(|k| 0.37 - 0.11 * k as f64).collect();
        let project = |row: &Vec<f64>, w: &Matrix, b: Option<&Vec<f64>>| -> Vec<f64> {
            (0..dh)
                .map(|k| {
                    let mut s = b.map_or(0.0, |b| b[k]);
                    for i in 0..d {
                        s += row[i] * w[i][k];
                    }
                    s
                })
                .collect()
        };
        for n in 0..m {
            let q = project(&x[n], &w2, Some(&b2));
            let mut delta = vec![0.0; m];
            for j in 0..m {
                let k = project(&x[j], &w3, Some(&b3));
                let mut s = 0.0;
                for c in 0..dh {
                    s += q[c] * k[c];
                }
                delta[j] = s / (dh as f64).sqrt();
            }
            let top = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = delta.iter().map(|v| (v - top).exp()).sum();
            for j in 0..m {
                let alpha = (delta[j] - top).exp() / z;
                let v = project(&x[j], &w1, None);
                for c in 0..dh {
                    joined[n][h * dh + c] += alpha * v[c];
                }
            }
        }
    }
    let wh = matrix(&store.get(params.output_w).value);
    joined
        .iter()
        .map(|row| (0..d).map(|o| (0..d).map(|i| row[i] * wh[i][o]).sum()).collect())
        .collect()
}

pub fn layer_norm_oracle(row: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    row.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) / (var + 1e-5).sqrt() * scale[k] + shift[k])
        .collect()
}

/// Loop transcription of one module over element rows `x` (`[NT][D]`).
pub fn module_oracle(store: &ParamStore, params: &ModuleParams, x: &Matrix, scheme: &PartitionScheme) -> Matrix {
    let d = x[0].len();
    let mut merged = vec![Vec::new(); x.len()];
    for subset in scheme.subsets() {
        let rows: Matrix = subset.iter().map(|&e| x[e].clone()).collect();
        for (k, out) in attention_oracle(store, &params.attention, &rows).into_iter().enumerate() {
            merged[subset[k]] = out;
        }
    }
    let w1 = matrix(&store.get(params.ffn_w1).value);
    let b1 = vector(store, params.ffn_b1);
    let w2 = matrix(&store.get(params.ffn_w2).value);
    let b2 = vector(store, params.ffn_b2);
    x.iter()
        .zip(&merged)
        .map(|(xr, ar)| {
            let r: Vec<f64> = xr.iter().zip(ar).map(|(a, b)| a + b).collect();
            let y = layer_norm_oracle(&r, &vector(store, params.norm1_scale), &vector(store, params.norm1_shift));
            let hidden: Vec<f64> = (0..4 * d)
                .map(|j| (b1[j] + (0..d).map(|i| y[i] * w1[i][j]).sum::<f64>()).max(0.0))
                .collect();
            let r2: Vec<f64> = (0..d)
                .map(|o| y[o] + b2[o] + (0..4 * d).map(|j| hidden[j] * w2[j][o]).sum::<f64>())
                .collect();
            layer_norm_oracle(&r2, &vector(store, params.norm2_scale), &vector(store, params.norm2_shift))
        })
        .collect()
}

/// |∂(Σ w · out_a)/∂x_b| for every element b, via the tape.
pub fn input_sensitivity(
    x: &Tensor,
    query: usize,
    run: impl Fn(&mut Tape, Var) -> Var,
) -> Vec<f64> {
    let d = x.shape()[1];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = run(&mut tape, xv);
    let row = tape.gather_rows(out, &[query]).unwrap();
    let weights = tape.constant(Tensor::new(vec![1, d], (0..d).map(|k| 1.0 + k as f64).collect()).unwrap());
    let weighted = tape.mul(row, weights).unwrap();
    let loss = tape.sum(weighted);
    let grads = tape.gradients(loss).unwrap();
    let g = grads.get(xv).unwrap();
    g.data().chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SpatialGraph {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((i, rng.gen_range(0..i), 1.0));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    SpatialGraph::from_edges(n, &edges, true).unwrap()
}

/// All-pairs spatial hops by Floyd–Warshall.
pub fn spatial_hops(g: &SpatialGraph) -> Vec<Vec<usize>> {
    let n = g.n_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if i != j && g.weight(i, j) > 0.0 {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    d
}

/// The unified graph is the Cartesian product of the spatial graph with a
/// time path, so its distance is spatial hops plus |Δt|.
pub fn product_distance(hops: &[Vec<usize>], a: StCoord, b: StCoord) -> usize {
    hops[a.node][b.node] + a.time.abs_diff(b.time)
}

/// Nearest-base assignment written out directly from the distance oracle.
pub fn oracle_assignment(ug: &UnifiedGraph, bases: &[StCoord]) -> Vec<usize> {
    let hops = spatial_hops(ug.spatial());
    let n = ug.n_elements();
    let mut order: Vec<(usize, usize)> = (0..n)
        .map(|e| {
            let c = ug.coord(e);
            (bases.iter().map(|&b| product_distance(&hops, b, c)).min().unwrap(), e)
        })
        .collect();
    order.sort();
    let mut sizes = vec![0; bases.len()];
    let mut out = vec![usize::MAX; n];
    for (d, e) in order {
        let c = ug.coord(e);
        let mut owner = None;
        for p in 0..bases.len() {
            if product_distance(&hops, bases[p], c) == d {
                owner = match owner {
                    Some(q) if sizes[q] <= sizes[p] => Some(q),
                    _ => Some(p),
                };
            }
        }
        let owner = owner.unwrap();
        out[e] = owner;
        sizes[owner] += 1;
    }
    out
}

pub fn overlap_oracle(p1: &PartitionScheme, p2: &PartitionScheme) -> Vec<f64> {
    (0..p1.n_subsets())
        .map(|p| {
            let a: BTreeSet<_> = p1.subsets()[p].iter().collect();
            let b: BTreeSet<_> = p2.subsets()[p].iter().collect();
            a.intersection(&b).count() as f64 / a.len() as f64
        })
        .collect()
}

pub fn assert_disjoint_cover(s: &PartitionScheme, n: usize) {
    let mut all = s.concatenated();
    assert_eq!(all.len(), n);
    all.sort();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
    for (p, subset) in s.subsets().iter().enumerate() {
        for &e in subset {
            assert_eq!(s.subset_of(e), p);
        }
    }
}

pub fn metrics_oracle(pred: &[f64], truth: &[f64]) -> (f64, f64, f64, usize) {
    let kept: Vec<(f64, f64)> = pred
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t != 0.0)
        .map(|(p, t)| (*p, *t))
        .collect();
    let n = kept.len() as f64;
    let mae = kept.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mape = 100.0 * kept.iter().map(|(p, t)| ((p - t) / t).abs()).sum::<f64>() / n;
    let rmse = (kept.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
    (mae, mape, rmse, kept.len())
}

/// Dense weighted adjacency with edge probability `p`, optionally one-way.
pub fn random_dense(rng: &mut ChaCha8Rng, n: usize, p: f64, symmetric: bool) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (!symmetric || i < j) && rng.gen::<f64>() < p {
                let w = rng.gen_range(0.1..3.0);
                a[i * n + j] = w;
                if symmetric {
                    a[j * n + i] = w;
                }
            }
        }
    }
    a
}

/// The unified adjacency entry written directly from its case definition.
pub fn unified_entry(adjacency: &[f64], n: usize, a: StCoord, b: StCoord) -> f64 {
    if a.node == b.node && a.time.abs_diff(b.time) == 1 {
        1.0
    } else if a.time == b.time {
        adjacency[a.node * n + b.node]
    } else {
        0.0
    }
}

/// All-pairs distances as the least p with a nonzero (A^ST)^p entry, by
/// repeated boolean matrix products over the dense NT × NT support.
pub fn matrix_power_distances(adjacency: &[f64], n: usize, t: usize) -> Vec<Vec<Option<usize>>> {
    let m = n * t;
    let coord = |k: usize| StCoord::new(k % n, k / n);
    let support: Vec<Vec<bool>> = (0..m)
        .map(|u| (0..m).map(|v| unified_entry(adjacency, n, coord(u), coord(v)) > 0.0).collect())
        .collect();
    let mut power: Vec<Vec<bool>> = (0..m).map(|u| (0..m).map(|v| u == v).collect()).collect();
    let mut dist: Vec<Vec<Option<usize>>> = vec![vec![None; m]; m];
    for p in 0..=m {
        for u in 0..m {
            for v in 0..m {
                if power[u][v] && dist[u][v].is_none() {
                    dist[u][v] = Some(p);
                }
            }
        }
        let mut next = vec![vec![false; m]; m];
        for u in 0..m {
            for k in 0..m {
                if power[u][k] {
                    for v in 0..m {
                        next[u][v] |= support[k][v];
                    }
                }
            }
        }
        power = next;
    }
    dist
}
