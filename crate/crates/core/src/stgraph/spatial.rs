use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Road or metro network: `n` nodes with a dense nonnegative weight matrix.
///
/// Connectivity is the support of the matrix (weight > 0). Node labels are
/// the identifiers used in the source file, in first-appearance order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    n: usize,
    adjacency: Vec<f64>,
    labels: Vec<String>,
    edge_lines: usize,
}

impl SpatialGraph {
    /// Builds a graph from `(src, dst, weight)` triples over nodes `0..n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], symmetrize: bool) -> Result<Self> {
        let mut adjacency = vec![0.0; n * n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::input(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            check_weight(w, || format!("edge ({i}, {j})"))?;
            if i == j {
                warn!("self-referential edge on node {i}");
            }
            let slot = &mut adjacency[i * n + j];
            *slot = f64::max(*slot, w);
        }
        let mut g = Self {
            n,
            adjacency,
            labels: (0..n).map(|i| i.to_string()).collect(),
            edge_lines: edges.len(),
        };
        if symmetrize {
            g.symmetrize();
        }
        Ok(g)
    }

    pub fn from_dense(n: usize, adjacency: Vec<f64>) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::Dimension {
                op: "adjacency",
                lhs: vec![n, n],
                rhs: vec![adjacency.len()],
            });
        }
        for (k, &w) in adjacency.iter().enumerate() {
            check_weight(w, || format!("entry ({}, {})", k / n, k % n))?;
        }
        let edge_lines = adjacency.iter().filter(|&&w| w > 0.0).count();
        Ok(Self {
            n,
            adjacency,
            labels: (0..n).map(|i| i.to_string()).collect(),
            edge_lines,
        })
    }

    /// Parses the whitespace edge-list format: `src dst [weight]` per line,
    /// `#` comments, and an optional leading `nodes <N>` directive.
    pub fn parse(text: &str, symmetrize: bool) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        let mut seen_content = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let at = |msg: &str| Error::input(format!("line {}: {msg}", lineno + 1));
            if fields[0] == "nodes" {
                if seen_content || declared.is_some() {
                    return Err(at("'nodes' directive must be the first entry"));
                }
                let n = fields
                    .get(1)
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|_| fields.len() == 2)
                    .ok_or_else(|| at("expected 'nodes <N>'"))?;
                declared = Some(n);
                continue;
            }
            seen_content = true;
            if fields.len() < 2 || fields.len() > 3 {
                return Err(at("expected 'src dst [weight]'"));
            }
            let weight = match fields.get(2) {
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| at(&format!("invalid weight '{s}'")))?,
                None => 1.0,
            };
            if !weight.is_finite() || weight < 0.0 {
                return Err(at(&format!("negative or non-finite weight {weight}")));
            }
            let mut id = |label: &str| {
                *index.entry(label.to_string()).or_insert_with(|| {
                    labels.push(label.to_string());
                    labels.len() - 1
                })
            };
            let (i, j) = (id(fields[0]), id(fields[1]));
            if i == j {
                warn!("line {}: self-referential edge on node {}", lineno + 1, fields[0]);
            }
            edges.push((i, j, weight));
        }
        let n = match declared {
            Some(n) if n < labels.len() => {
                return Err(Error::input(format!(
                    "declared {n} nodes but edges reference {}",
                    labels.len()
                )))
            }
            Some(n) => n,
            None => labels.len(),
        };
        // Isolated declared nodes get the smallest unused integer labels.
        let used: HashSet<String> = labels.iter().cloned().collect();
        let mut next = 0usize;
        while labels.len() < n {
            while used.contains(&next.to_string()) {
                next += 1;
            }
            labels.push(next.to_string());
            next += 1;
        }
        let mut adjacency = vec![0.0; n * n];
        for &(i, j, w) in &edges {
            let slot = &mut adjacency[i * n + j];
            *slot = f64::max(*slot, w);
        }
        let mut g = Self {
            n,
            adjacency,
            labels,
            edge_lines: edges.len(),
        };
        if symmetrize {
            g.symmetrize();
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>, symmetrize: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text, symmetrize)
    }

    /// A ← max(A, Aᵀ).
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                let w = self.adjacency[i * n + j].max(self.adjacency[j * n + i]);
                self.adjacency[i * n + j] = w;
                self.adjacency[j * n + i] = w;
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Number of edge lines read from the source (E).
    pub fn edge_count(&self) -> usize {
        self.edge_lines
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::contract("label count differs from node count"));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > 0.0
    }

    /// Count of nonzero entries of A (ordered pairs, self-loops included).
    pub fn support_size(&self) -> usize {
        self.adjacency.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (i + 1..n).all(|j| self.weight(i, j) == self.weight(j, i)))
    }

    /// Out-neighbours of `i` in ascending order, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.connected(i, j))
    }

    /// Breadth-first hop counts from `src` over the support of A.
    pub fn hop_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Serialises back to the edge-list text format (one line per nonzero entry).
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("nodes {}\n", self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    let _ = writeln!(out, "{} {} {w}", self.labels[i], self.labels[j]);
                }
            }
        }
        out
    }
}

fn check_weight(w: f64, what: impl FnOnce() -> String) -> Result<()> {
    if !w.is_finite() || w < 0.0 {
        return Err(Error::input(format!("{}: negative or non-finite weight {w}", what())));
    }
    Ok(())
}
