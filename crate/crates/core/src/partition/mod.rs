//! Neighbourhood-subset partitions of the unified graph.
//!
//! Base nodes are picked by clustering the spatial nodes on their Laplacian
//! coordinates and placed at the central time step. The radius `tau` is the
//! smallest value (never below ⌊T/2⌋) for which the balls around all bases
//! cover every element. Each element is then owned by exactly one base: the
//! nearest one, ties going to the currently smaller subset and then to the
//! lower base index. The shifted scheme repeats the construction from moved
//! base nodes.

mod kmeans;

use std::collections::HashMap;
use std::fmt;

use log::warn;

use crate::error::{Error, Result};
use crate::stgraph::{StCoord, UnifiedGraph};

pub use kmeans::{kmeans, KMeans};

/// Size ratio (max / median) above which a partition is reported as unbalanced.
pub const SIZE_RATIO_WARNING: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeLabel {
    P1,
    P2,
}

impl fmt::Display for SchemeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeLabel::P1 => "P1",
            SchemeLabel::P2 => "P2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseNodeSet {
    pub coords: Vec<StCoord>,
    pub tau: usize,
}

impl BaseNodeSet {
    /// Bases for the given spatial nodes at the central time step.
    pub fn at_center(ug: &UnifiedGraph, nodes: &[usize], tau: usize) -> Self {
        let t = ug.center_time();
        Self {
            coords: nodes.iter().map(|&n| StCoord::new(n, t)).collect(),
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// A disjoint cover of all unified-graph elements by `l` subsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionScheme {
    label: SchemeLabel,
    assignment: Vec<usize>,
    subsets: Vec<Vec<usize>>,
    bases: BaseNodeSet,
}

impl PartitionScheme {
    /// Rebuilds a scheme from an element → subset map, checking every invariant.
    pub fn from_assignment(
        ug: &UnifiedGraph,
        label: SchemeLabel,
        assignment: Vec<usize>,
        bases: BaseNodeSet,
    ) -> Result<Self> {
        let l = bases.len();
        if assignment.len() != ug.n_elements() {
            return Err(Error::contract(format!(
                "assignment covers {} elements, graph has {}",
                assignment.len(),
                ug.n_elements()
            )));
        }
        let mut subsets = vec![Vec::new(); l];
        for (e, &s) in assignment.iter().enumerate() {
            if s >= l {
                return Err(Error::contract(format!("element {e} assigned to subset {s} >= {l}")));
            }
            subsets[s].push(e);
        }
        for (p, base) in bases.coords.iter().enumerate() {
            if !ug.contains(*base) || assignment[ug.flat(*base)] != p {
                return Err(Error::contract(format!("subset {p} does not contain its base")));
            }
        }
        Ok(Self {
            label,
            assignment,
            subsets,
            bases,
        })
    }

    pub fn label(&self) -> SchemeLabel {
        self.label
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn bases(&self) -> &BaseNodeSet {
        &self.bases
    }

    pub fn tau(&self) -> usize {
        self.bases.tau
    }

    pub fn n_subsets(&self) -> usize {
        self.subsets.len()
    }

    pub fn n_elements(&self) -> usize {
        self.assignment.len()
    }

    pub fn subset_of(&self, element: usize) -> usize {
        self.assignment[element]
    }

    /// Element order obtained by concatenating the subsets.
    pub fn concatenated(&self) -> Vec<usize> {
        self.subsets.iter().flatten().copied().collect()
    }

    /// Text export: header lines followed by `flat_index subset_id` rows.
    pub fn to_text(&self, ug: &UnifiedGraph) -> String {
        let bases: Vec<String> = self
            .bases
            .coords
            .iter()
            .map(|&c| ug.flat(c).to_string())
            .collect();
        let mut out = format!(
            "# scheme {}\n# l {}\n# tau {}\n# bases {}\n",
            self.label,
            self.n_subsets(),
            self.tau(),
            bases.join(",")
        );
        for (e, s) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{e} {s}\n"));
        }
        out
    }

    pub fn from_text(ug: &UnifiedGraph, text: &str) -> Result<Self> {
        let mut label = None;
        let mut l = None;
        let mut tau = None;
        let mut bases = None;
        let mut assignment = vec![usize::MAX; ug.n_elements()];
        let mut rows = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let at = |msg: &str| Error::input(format!("line {}: {msg}", lineno + 1));
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let mut parts = header.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("scheme"), Some("P1")) => label = Some(SchemeLabel::P1),
                    (Some("scheme"), Some("P2")) => label = Some(SchemeLabel::P2),
                    (Some("l"), Some(v)) => l = Some(v.parse::<usize>().map_err(|_| at("bad l"))?),
                    (Some("tau"), Some(v)) => {
                        tau = Some(v.parse::<usize>().map_err(|_| at("bad tau"))?)
                    }
                    (Some("bases"), Some(v)) => {
                        let parsed: std::result::Result<Vec<usize>, _> =
                            v.split(',').map(str::parse::<usize>).collect();
                        bases = Some(parsed.map_err(|_| at("bad base list"))?);
                    }
                    _ => return Err(at("unrecognised header")),
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(e), Some(s), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(at("expected 'flat_index subset_id'"));
            };
            let e: usize = e.parse().map_err(|_| at("bad element index"))?;
            let s: usize = s.parse().map_err(|_| at("bad subset id"))?;
            if e >= assignment.len() || assignment[e] != usize::MAX {
                return Err(at("element index out of range or repeated"));
            }
            assignment[e] = s;
            rows += 1;
        }
        let (Some(label), Some(l), Some(tau), Some(bases)) = (label, l, tau, bases) else {
            return Err(Error::input("partition file is missing a header line"));
        };
        if rows != ug.n_elements() || bases.len() != l {
            return Err(Error::input("partition file does not cover the graph"));
        }
        if bases.iter().any(|&b| b >= ug.n_elements()) {
            return Err(Error::input("base index out of range"));
        }
        let coords = bases.iter().map(|&b| ug.coord(b)).collect();
        Self::from_assignment(ug, label, assignment, BaseNodeSet { coords, tau })
    }
}

/// Picks `l` spatial base nodes by K-Means over the rows of `coords` (one row
/// per node). Each cluster contributes the node nearest its centroid; a node
/// already taken is replaced by the next-nearest unused one.
pub fn select_base_nodes(coords: &[Vec<f64>], l: usize, seed: u64) -> Result<Vec<usize>> {
    let n = coords.len();
    if l == 0 || l > n {
        return Err(Error::contract(format!("subset count {l} must be in 1..={n}")));
    }
    let km = kmeans(coords, l, seed);
    let mut used = vec![false; n];
    let mut bases = Vec::with_capacity(l);
    for centroid in &km.centroids {
        let mut order: Vec<(f64, usize)> = coords
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let pick = order
            .iter()
            .map(|&(_, i)| i)
            .find(|&i| !used[i])
            .expect("l <= n leaves an unused node");
        used[pick] = true;
        bases.push(pick);
    }
    Ok(bases)
}

/// Smallest radius ≥ ⌊T/2⌋ at which the balls around `bases` (spatial
/// nodes at the central time step) cover every element.
pub fn calibrate_tau(ug: &UnifiedGraph, bases: &[usize]) -> Result<usize> {
    let coords = BaseNodeSet::at_center(ug, bases, 0).coords;
    covering_radius(ug, &coords)
}

fn covering_radius(ug: &UnifiedGraph, coords: &[StCoord]) -> Result<usize> {
    if coords.is_empty() {
        return Err(Error::contract("calibrate_tau needs at least one base"));
    }
    let mut nearest: Vec<Option<usize>> = vec![None; ug.n_elements()];
    for &c in coords {
        for (slot, d) in nearest.iter_mut().zip(ug.distances_from(ug.flat(c))) {
            if let Some(d) = d {
                *slot = Some(slot.map_or(d, |s: usize| s.min(d)));
            }
        }
    }
    let mut tau = ug.horizon() / 2;
    for (e, d) in nearest.iter().enumerate() {
        match d {
            Some(d) => tau = tau.max(*d),
            None => {
                let c = ug.coord(e);
                return Err(Error::Coverage {
                    element: e,
                    node: c.node,
                    time: c.time,
                });
            }
        }
    }
    Ok(tau)
}

/// Owner of every element under nearest-base assignment. Elements are
/// visited by (distance to the nearest base, flat index); ties go to the
/// smaller current subset, then the lower base index. `None` when some
/// element is unreachable from every base.
fn nearest_owner(dist: &[&[Option<usize>]]) -> Option<Vec<usize>> {
    let n = dist.first().map_or(0, |d| d.len());
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(n);
    for e in 0..n {
        order.push((dist.iter().filter_map(|d| d[e]).min()?, e));
    }
    order.sort_unstable();
    let mut sizes = vec![0usize; dist.len()];
    let mut assignment = vec![0usize; n];
    for &(d, e) in &order {
        let owner = (0..dist.len())
            .filter(|&p| dist[p][e] == Some(d))
            .min_by_key(|&p| (sizes[p], p))
            .expect("at least one base at the minimum distance");
        assignment[e] = owner;
        sizes[owner] += 1;
    }
    Some(assignment)
}

fn build_scheme(ug: &UnifiedGraph, bases: &BaseNodeSet, label: SchemeLabel) -> Result<PartitionScheme> {
    let l = bases.len();
    if l == 0 {
        return Err(Error::contract("partition needs at least one base"));
    }
    if let Some(bad) = bases.coords.iter().find(|c| !ug.contains(**c)) {
        return Err(Error::contract(format!("base {bad:?} outside the graph")));
    }
    for (p, c) in bases.coords.iter().enumerate() {
        if bases.coords[..p].contains(c) {
            return Err(Error::contract(format!("bases {p} and another coincide at {c:?}")));
        }
    }
    let dist: Vec<Vec<Option<usize>>> = bases
        .coords
        .iter()
        .map(|&c| ug.distances_from(ug.flat(c)))
        .collect();
    for e in 0..ug.n_elements() {
        let best = dist.iter().filter_map(|d| d[e]).min();
        if !matches!(best, Some(d) if d <= bases.tau) {
            let c = ug.coord(e);
            return Err(Error::Coverage {
                element: e,
                node: c.node,
                time: c.time,
            });
        }
    }
    let dist: Vec<&[Option<usize>]> = dist.iter().map(Vec::as_slice).collect();
    let assignment = nearest_owner(&dist).expect("coverage checked above");
    PartitionScheme::from_assignment(ug, label, assignment, bases.clone())
}

/// Static scheme P1 around calibrated bases.
pub fn build_p1(ug: &UnifiedGraph, bases: &BaseNodeSet) -> Result<PartitionScheme> {
    build_scheme(ug, bases, SchemeLabel::P1)
}

/// Walks `hops` steps from `from` along a shortest spatial path toward `to`,
/// preferring the lowest next node id. Returns the visited nodes, `from` first.
fn walk_toward(ug: &UnifiedGraph, from: usize, to: usize, hops: usize) -> Vec<usize> {
    let g = ug.spatial();
    let to_target = g.hop_distances(to);
    let mut path = vec![from];
    let Some(d) = to_target[from] else {
        return path;
    };
    let mut at = from;
    for _ in 0..hops.min(d) {
        let here = to_target[at].expect("on a path to the target");
        at = g
            .neighbors(at)
            .find(|&v| to_target[v] == Some(here - 1))
            .expect("shortest path continues");
        path.push(at);
    }
    path
}

/// Groups bases for shifting: a greedy matching of mutually close pairs
/// (by hop distance, then index), with any leftover base joining the group
/// of its nearest base. Unreachable leftovers stay alone.
fn pair_bases(ug: &UnifiedGraph, nodes: &[usize]) -> Vec<Vec<usize>> {
    let g = ug.spatial();
    let l = nodes.len();
    let dist: Vec<Vec<Option<usize>>> = nodes.iter().map(|&b| g.hop_distances(b)).collect();
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for p in 0..l {
        for q in p + 1..l {
            if let Some(d) = dist[p][nodes[q]] {
                candidates.push((d, p, q));
            }
        }
    }
    candidates.sort_unstable();
    let mut group_of: Vec<Option<usize>> = vec![None; l];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (_, p, q) in candidates {
        if group_of[p].is_none() && group_of[q].is_none() {
            group_of[p] = Some(groups.len());
            group_of[q] = Some(groups.len());
            groups.push(vec![p, q]);
        }
    }
    for p in 0..l {
        if group_of[p].is_some() {
            continue;
        }
        let nearest = (0..l)
            .filter(|&q| q != p && group_of[q].is_some())
            .filter_map(|q| dist[p][nodes[q]].map(|d| (d, q)))
            .min();
        match nearest.and_then(|(_, q)| group_of[q]) {
            Some(gi) => {
                groups[gi].push(p);
                group_of[p] = Some(gi);
            }
            None => {
                warn!("base {p} has no reachable partner; left unshifted");
                group_of[p] = Some(groups.len());
                groups.push(vec![p]);
            }
        }
    }
    groups
}

/// Derives the shifted bases from P1.
///
/// Bases are grouped into pairs of nearest neighbours (a leftover joins its
/// nearest group). Every member of a group moves to the node ⌊d/2⌋ hops from
/// the group's first base toward its second, i.e. onto the boundary between
/// their subsets, and the members are spread over the time axis at the
/// centres of `k` equal bands. Each shifted subset then straddles the
/// boundary and keeps roughly `1/k` of its original elements. When `T < k`
/// the time axis cannot separate the group and only the first member moves.
/// A landing spot already taken by an earlier base backs off toward the
/// original position. The positions are then refined so that every subset
/// keeps about half of its P1 elements.
pub fn shift_bases(ug: &UnifiedGraph, p1: &PartitionScheme) -> BaseNodeSet {
    let bases = &p1.bases;
    let l = bases.len();
    if l <= 1 {
        return bases.clone();
    }
    let horizon = ug.horizon();
    let nodes: Vec<usize> = bases.coords.iter().map(|c| c.node).collect();
    let mut targets: Vec<Vec<StCoord>> = vec![Vec::new(); l];
    for group in pair_bases(ug, &nodes) {
        let k = group.len();
        if k == 1 {
            targets[group[0]] = vec![bases.coords[group[0]]];
            continue;
        }
        let (a, b) = (nodes[group[0]], nodes[group[1]]);
        let d = ug.spatial().hop_distances(a)[b].unwrap_or(0);
        let path = walk_toward(ug, a, b, d / 2);
        let meeting = *path.last().expect("path starts at the base");
        for (j, &p) in group.iter().enumerate() {
            let own = bases.coords[p];
            targets[p] = if horizon >= k {
                let time = (2 * j + 1) * horizon / (2 * k);
                // Fallbacks walk back from the meeting node toward the base.
                walk_toward(ug, meeting, own.node, usize::MAX)
                    .into_iter()
                    .map(|v| StCoord::new(v, time))
                    .collect()
            } else if j == 0 {
                path.iter().rev().map(|&v| StCoord::new(v, own.time)).collect()
            } else {
                vec![own]
            };
        }
    }
    let mut taken: Vec<StCoord> = Vec::with_capacity(l);
    for (p, options) in targets.into_iter().enumerate() {
        let landing = options
            .into_iter()
            .find(|c| !taken.contains(c))
            .unwrap_or_else(|| {
                // Nearest free element to the original base.
                let own = bases.coords[p];
                let dist = ug.distances_from(ug.flat(own));
                let mut order: Vec<(usize, usize)> = dist
                    .iter()
                    .enumerate()
                    .map(|(e, d)| (d.unwrap_or(usize::MAX), e))
                    .collect();
                order.sort_unstable();
                order
                    .into_iter()
                    .map(|(_, e)| ug.coord(e))
                    .find(|c| !taken.contains(c))
                    .expect("l <= NT leaves a free element")
            });
        taken.push(landing);
    }
    BaseNodeSet {
        coords: refine_shift(ug, p1, taken),
        tau: bases.tau,
    }
}

/// Candidate positions per base during refinement.
const REFINE_CANDIDATES: usize = 64;
const REFINE_SWEEPS: usize = 4;

/// Coordinate descent on the shifted positions. Each base in turn tries the
/// elements nearest its P1 position (within the P1 radius) and keeps a move
/// that lowers Σ_p (overlap_p − ½)², where overlap_p = |P2_p ∩ P1_p| / |P1_p|.
fn refine_shift(ug: &UnifiedGraph, p1: &PartitionScheme, start: Vec<StCoord>) -> Vec<StCoord> {
    let l = start.len();
    let mut cache: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
    let mut dist_of = |flat: usize| -> Vec<Option<usize>> {
        cache.entry(flat).or_insert_with(|| ug.distances_from(flat)).clone()
    };
    let cost = |dist: &[Vec<Option<usize>>]| -> f64 {
        let views: Vec<&[Option<usize>]> = dist.iter().map(Vec::as_slice).collect();
        let Some(owner) = nearest_owner(&views) else {
            return f64::INFINITY;
        };
        p1.subsets
            .iter()
            .enumerate()
            .map(|(p, members)| {
                let kept = members.iter().filter(|&&e| owner[e] == p).count();
                let o = kept as f64 / members.len() as f64 - 0.5;
                o * o
            })
            .sum()
    };

    let mut flats: Vec<usize> = start.iter().map(|&c| ug.flat(c)).collect();
    let mut dist: Vec<Vec<Option<usize>>> = flats.iter().map(|&f| dist_of(f)).collect();
    let mut best = cost(&dist);
    let candidates: Vec<Vec<usize>> = p1
        .bases
        .coords
        .iter()
        .map(|&c| {
            let from = dist_of(ug.flat(c));
            let mut near: Vec<(usize, usize)> = from
                .iter()
                .enumerate()
                .filter_map(|(e, d)| d.filter(|&d| d <= p1.tau()).map(|d| (d, e)))
                .collect();
            near.sort_unstable();
            near.into_iter().take(REFINE_CANDIDATES).map(|(_, e)| e).collect()
        })
        .collect();
    for _ in 0..REFINE_SWEEPS {
        let mut improved = false;
        for p in 0..l {
            for &cand in &candidates[p] {
                if flats.contains(&cand) {
                    continue;
                }
                let previous = std::mem::replace(&mut dist[p], dist_of(cand));
                let c = cost(&dist);
                if c < best - 1e-12 {
                    best = c;
                    flats[p] = cand;
                    improved = true;
                } else {
                    dist[p] = previous;
                }
            }
        }
        if !improved {
            break;
        }
    }
    flats.into_iter().map(|f| ug.coord(f)).collect()
}

/// Shifted scheme P2. The radius is raised above P1's only when the shifted
/// bases fail to cover every element.
pub fn build_p2(ug: &UnifiedGraph, shifted: &BaseNodeSet) -> Result<PartitionScheme> {
    let needed = covering_radius(ug, &shifted.coords)?;
    let mut bases = shifted.clone();
    if needed > bases.tau {
        warn!("shifted bases need tau {needed} > {}; raised for P2", bases.tau);
        bases.tau = needed;
    }
    build_scheme(ug, &bases, SchemeLabel::P2)
}

/// Both schemes from a base-node list, in the order the pipeline runs them.
pub fn build_schemes(ug: &UnifiedGraph, base_nodes: &[usize]) -> Result<(PartitionScheme, PartitionScheme)> {
    let tau = calibrate_tau(ug, base_nodes)?;
    let p1 = build_p1(ug, &BaseNodeSet::at_center(ug, base_nodes, tau))?;
    let shifted = shift_bases(ug, &p1);
    let p2 = build_p2(ug, &shifted)?;
    Ok((p1, p2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionReport {
    pub tau_p1: usize,
    pub tau_p2: usize,
    pub sizes_p1: Vec<usize>,
    pub sizes_p2: Vec<usize>,
    /// max / median subset size, per scheme.
    pub size_ratio_p1: f64,
    pub size_ratio_p2: f64,
    /// |P2_p ∩ P1_p| / |P1_p| for each subset index p.
    pub overlap: Vec<f64>,
    pub covered: bool,
}

fn size_ratio(sizes: &[usize]) -> f64 {
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2] as f64
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0
    };
    sorted[k - 1] as f64 / median
}

pub fn partition_report(p1: &PartitionScheme, p2: &PartitionScheme) -> Result<PartitionReport> {
    if p1.n_elements() != p2.n_elements() || p1.n_subsets() != p2.n_subsets() {
        return Err(Error::contract("schemes cover different element sets"));
    }
    let sizes = |s: &PartitionScheme| s.subsets.iter().map(Vec::len).collect::<Vec<_>>();
    let overlap = (0..p1.n_subsets())
        .map(|p| {
            let shared = p1.subsets[p]
                .iter()
                .filter(|&&e| p2.assignment[e] == p)
                .count();
            shared as f64 / p1.subsets[p].len() as f64
        })
        .collect();
    let covered = [p1, p2].iter().all(|s| {
        let mut seen = vec![false; s.n_elements()];
        s.concatenated().into_iter().all(|e| !std::mem::replace(&mut seen[e], true))
            && seen.iter().all(|&x| x)
    });
    let report = PartitionReport {
        tau_p1: p1.tau(),
        tau_p2: p2.tau(),
        sizes_p1: sizes(p1),
        sizes_p2: sizes(p2),
        size_ratio_p1: size_ratio(&sizes(p1)),
        size_ratio_p2: size_ratio(&sizes(p2)),
        overlap,
        covered,
    };
    for (label, ratio) in [("P1", report.size_ratio_p1), ("P2", report.size_ratio_p2)] {
        if ratio > SIZE_RATIO_WARNING {
            warn!("{label} subset sizes unbalanced: max/median = {ratio:.2}");
        }
    }
    Ok(report)
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tau P1 {}  P2 {}", self.tau_p1, self.tau_p2)?;
        writeln!(f, "coverage {}", if self.covered { "complete" } else { "BROKEN" })?;
        writeln!(
            f,
            "size ratio (max/median) P1 {:.3}  P2 {:.3}",
            self.size_ratio_p1, self.size_ratio_p2
        )?;
        writeln!(f, "{:>6} {:>8} {:>8} {:>8}", "subset", "|P1|", "|P2|", "overlap")?;
        for p in 0..self.overlap.len() {
            writeln!(
                f,
                "{:>6} {:>8} {:>8} {:>8.3}",
                p, self.sizes_p1[p], self.sizes_p2[p], self.overlap[p]
            )?;
        }
        Ok(())
    }
}
