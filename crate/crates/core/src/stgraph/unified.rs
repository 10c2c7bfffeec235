use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::SpatialGraph;

/// A state element: spatial node `node` at time step `time`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StCoord {
    pub node: usize,
    pub time: usize,
}

impl StCoord {
    pub fn new(node: usize, time: usize) -> Self {
        Self { node, time }
    }
}

/// The NT-vertex graph replicating the spatial graph at every time step and
/// chaining each node to itself across adjacent steps.
///
/// Vertices are addressed by flat index `time * N + node`. Adjacency is kept
/// as sorted lists over the support (weight > 0).
#[derive(Clone, Debug)]
pub struct UnifiedGraph {
    spatial: SpatialGraph,
    horizon: usize,
    adjacency: Vec<Vec<usize>>,
}

impl UnifiedGraph {
    pub fn build(spatial: &SpatialGraph, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::contract("unified graph needs T >= 1"));
        }
        let n = spatial.n_nodes();
        let mut adjacency = vec![Vec::new(); n * horizon];
        for t in 0..horizon {
            for i in 0..n {
                let list = &mut adjacency[t * n + i];
                if t > 0 {
                    list.push((t - 1) * n + i);
                }
                for j in 0..n {
                    if spatial.connected(i, j) {
                        list.push(t * n + j);
                    }
                }
                if t + 1 < horizon {
                    list.push((t + 1) * n + i);
                }
            }
        }
        Ok(Self {
            spatial: spatial.clone(),
            horizon,
            adjacency,
        })
    }

    pub fn spatial(&self) -> &SpatialGraph {
        &self.spatial
    }

    pub fn n_nodes(&self) -> usize {
        self.spatial.n_nodes()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_elements(&self) -> usize {
        self.adjacency.len()
    }

    /// The central time step ⌊T/2⌋.
    pub fn center_time(&self) -> usize {
        self.horizon / 2
    }

    pub fn flat(&self, c: StCoord) -> usize {
        c.time * self.n_nodes() + c.node
    }

    pub fn coord(&self, flat: usize) -> StCoord {
        let n = self.n_nodes();
        StCoord::new(flat % n, flat / n)
    }

    pub fn contains(&self, c: StCoord) -> bool {
        c.node < self.n_nodes() && c.time < self.horizon
    }

    /// Entry of the unified adjacency matrix: 1 along the temporal chain,
    /// `A[i][i']` within a time step, 0 elsewhere.
    pub fn entry(&self, a: StCoord, b: StCoord) -> f64 {
        if a.node == b.node && a.time.abs_diff(b.time) == 1 {
            1.0
        } else if a.time == b.time {
            self.spatial.weight(a.node, b.node)
        } else {
            0.0
        }
    }

    /// Support neighbours of a flat index, ascending.
    pub fn neighbors(&self, flat: usize) -> &[usize] {
        &self.adjacency[flat]
    }

    /// Number of nonzero entries (ordered pairs).
    pub fn nnz(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Ordered temporal pairs: 2·N·(T−1).
    pub fn temporal_entries(&self) -> usize {
        2 * self.n_nodes() * (self.horizon - 1)
    }

    /// Ordered spatial pairs: T copies of the support of A.
    pub fn spatial_entries(&self) -> usize {
        self.horizon * self.spatial.support_size()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(u, list)| list.iter().all(|&v| self.adjacency[v].binary_search(&u).is_ok()))
    }

    /// Breadth-first hop counts from `src` to every element; `None` if unreachable.
    pub fn distances_from(&self, src: usize) -> Vec<Option<usize>> {
        self.bounded_bfs(src, usize::MAX)
    }

    fn bounded_bfs(&self, src: usize, limit: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_elements()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([(src, 0usize)]);
        while let Some((u, du)) = queue.pop_front() {
            if du >= limit {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back((v, du + 1));
                }
            }
        }
        dist
    }

    /// Shortest-path length between two elements; `None` when unreachable.
    pub fn st_distance(&self, a: StCoord, b: StCoord) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        self.distances_from(self.flat(a))[self.flat(b)]
    }

    /// Every element within `tau` hops of `center` (center included), sorted by flat index.
    pub fn ball(&self, center: StCoord, tau: usize) -> Vec<StCoord> {
        self.bounded_bfs(self.flat(center), tau)
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_some())
            .map(|(k, _)| self.coord(k))
            .collect()
    }

    /// Unified adjacency as an edge list of `(node,time)` pairs.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("nodes {}\n", self.n_elements());
        for (u, list) in self.adjacency.iter().enumerate() {
            let a = self.coord(u);
            for &v in list {
                let b = self.coord(v);
                let _ = writeln!(out, "{u} {v} {}", self.entry(a, b));
            }
        }
        out
    }
}
