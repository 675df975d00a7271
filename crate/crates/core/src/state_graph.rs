//! Weighted state graphs over observed states.
//!
//! The k-nearest-neighbor graph connects each state to its `k` most similar
//! states. The neighborhood size is picked by maximizing the one-dimensional
//! structural entropy `H¹`, the Shannon entropy of the stationary random-walk
//! distribution `d_v / vol`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, SihdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Cosine similarity, negative values clamped to zero.
    Cosine,
    /// Gaussian kernel `exp(-|x - y|² / 2σ²)` with σ the median pairwise distance.
    #[default]
    Rbf,
}

impl std::str::FromStr for Similarity {
    type Err = SihdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "rbf" | "gaussian-rbf" => Ok(Similarity::Rbf),
            other => Err(SihdError::InvalidArgument(format!("unknown similarity {other:?}"))),
        }
    }
}

/// How directed k-NN relations become undirected edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrization {
    #[default]
    Union,
    Intersection,
}

impl std::str::FromStr for Symmetrization {
    type Err = SihdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(Symmetrization::Union),
            "intersection" => Ok(Symmetrization::Intersection),
            other => Err(SihdError::InvalidArgument(format!(
                "unknown symmetrization {other:?}"
            ))),
        }
    }
}

/// Undirected weighted graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGraph {
    vertices: Vec<Vec<f64>>,
    /// Neighbor lists sorted by neighbor index.
    adjacency: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
    total_volume: f64,
}

impl StateGraph {
    /// Build from undirected edges `(i, j, w)`; repeated pairs are summed.
    pub fn from_edges(
        vertices: Vec<Vec<f64>>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n = vertices.len();
        let mut merged: HashMap<(usize, usize), f64> = HashMap::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(SihdError::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {n} vertices"
                )));
            }
            if i == j {
                return Err(SihdError::InvalidArgument(format!("self-loop on vertex {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(SihdError::InvalidArgument(format!(
                    "edge ({i}, {j}) has invalid weight {w}"
                )));
            }
            *merged.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(i, j), &w) in &merged {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(Self::from_adjacency(vertices, adjacency))
    }

    /// Graph on `n` featureless vertices.
    pub fn from_abstract_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        Self::from_edges(vec![Vec::new(); n], edges)
    }

    /// Build from a dense symmetric weight matrix (row-major, `n * n`); the
    /// diagonal is ignored and zero entries produce no edge.
    pub fn from_dense(vertices: Vec<Vec<f64>>, weights: &[f64]) -> Result<Self> {
        let n = vertices.len();
        if weights.len() != n * n {
            return Err(SihdError::ShapeMismatch {
                expected: n * n,
                got: weights.len(),
            });
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (weights[i * n + j], weights[j * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1e-300) {
                    return Err(SihdError::InvalidArgument(format!(
                        "weights not symmetric at ({i}, {j})"
                    )));
                }
                if a > 0.0 {
                    edges.push((i, j, a));
                }
            }
        }
        Self::from_edges(vertices, edges)
    }

    fn from_adjacency(vertices: Vec<Vec<f64>>, adjacency: Vec<Vec<(usize, f64)>>) -> Self {
        let degrees: Vec<f64> = adjacency
            .iter()
            .map(|list| list.iter().map(|&(_, w)| w).sum())
            .collect();
        let total_volume = degrees.iter().sum();
        StateGraph {
            vertices,
            adjacency,
            degrees,
            total_volume,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.degrees[v]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map_or(0.0, |pos| self.adjacency[i][pos].1)
    }

    /// Edges `(i, j, w)` with `i < j`, ordered by `(i, j)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> StateGraph {
        let adjacency = self
            .adjacency
            .iter()
            .map(|list| list.iter().map(|&(j, w)| (j, w * factor)).collect())
            .collect();
        Self::from_adjacency(self.vertices.clone(), adjacency)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            vertices: self.vertices.clone(),
            edges: self.edges().collect(),
            k: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, k: Option<usize>) -> Result<()> {
        let path = path.as_ref();
        let mut file = self.to_file();
        file.k = k;
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| SihdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<StateGraph> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SihdError::io(path, e))?;
        let file: GraphFile = serde_json::from_str(&text)?;
        StateGraph::from_edges(file.vertices, file.edges)
    }
}

/// On-disk graph: vertex coordinates and `(i, j, w)` edge triples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

/// Deduplicated vertex set plus the map from every `(trajectory, timestep)`
/// to its vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupedStates {
    pub vertices: Vec<Vec<f64>>,
    /// `index[traj][t]` is the vertex of state `t` of trajectory `traj`.
    pub index: Vec<Vec<usize>>,
}

/// Merge states whose L∞ distance to an earlier representative is at most
/// `tol`; the first occurrence becomes the representative.
pub fn dedupe_states(dataset: &Dataset, tol: f64) -> DedupedStates {
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let cell = if tol > 0.0 { tol } else { 0.0 };
    let key_of = |s: &[f64]| -> Vec<i64> {
        if cell > 0.0 {
            s.iter().map(|x| (x / cell).floor() as i64).collect()
        } else {
            // exact matching: -0.0 and 0.0 share a key
            s.iter()
                .map(|&x| if x == 0.0 { 0 } else { x.to_bits() as i64 })
                .collect()
        }
    };
    let d = dataset.state_dim;
    let offsets = neighbor_offsets(if cell > 0.0 { d } else { 0 });
    let mut index = Vec::with_capacity(dataset.len());
    for traj in &dataset.trajectories {
        let mut ids = Vec::with_capacity(traj.len());
        for s in &traj.states {
            let key = key_of(s);
            let mut found: Option<usize> = None;
            for off in &offsets {
                let probe: Vec<i64> = if off.is_empty() {
                    key.clone()
                } else {
                    key.iter().zip(off).map(|(k, o)| k + o).collect()
                };
                if let Some(cands) = buckets.get(&probe) {
                    for &c in cands {
                        let close = vertices[c]
                            .iter()
                            .zip(s)
                            .all(|(a, b)| (a - b).abs() <= tol);
                        if close && found.is_none_or(|f| c < f) {
                            found = Some(c);
                        }
                    }
                }
            }
            let id = found.unwrap_or_else(|| {
                vertices.push(s.clone());
                let id = vertices.len() - 1;
                buckets.entry(key).or_default().push(id);
                id
            });
            ids.push(id);
        }
        index.push(ids);
    }
    DedupedStates { vertices, index }
}

fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    if d == 0 {
        return vec![Vec::new()];
    }
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<i64>| {
                [-1i64, 0, 1].into_iter().map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o);
                    p
                })
            })
            .collect();
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance. Beyond four million pairs a fixed
/// stride over the pair enumeration is used.
pub fn median_pairwise_distance(states: &[Vec<f64>]) -> f64 {
    const MAX_PAIRS: usize = 4_000_000;
    let n = states.len();
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs == 0 {
        return 0.0;
    }
    let stride = pairs.div_ceil(MAX_PAIRS);
    let mut dists = Vec::with_capacity(pairs / stride + 1);
    let mut p = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if p % stride == 0 {
                dists.push(sq_dist(&states[i], &states[j]).sqrt());
            }
            p += 1;
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Pairwise similarity function resolved for a particular state set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimilarityKernel {
    Cosine,
    Rbf { sigma: f64 },
}

impl SimilarityKernel {
    pub fn resolve(states: &[Vec<f64>], similarity: Similarity) -> Result<Self> {
        match similarity {
            Similarity::Cosine => {
                if let Some(i) = states.iter().position(|s| s.iter().all(|&x| x == 0.0)) {
                    return Err(SihdError::DegenerateSimilarity(format!(
                        "state {i} has zero norm"
                    )));
                }
                Ok(SimilarityKernel::Cosine)
            }
            Similarity::Rbf => {
                let mut sigma = median_pairwise_distance(states);
                if !(sigma > 0.0 && sigma.is_finite()) {
                    sigma = 1.0;
                }
                Ok(SimilarityKernel::Rbf { sigma })
            }
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            SimilarityKernel::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                (dot / (na * nb)).max(0.0)
            }
            SimilarityKernel::Rbf { sigma } => (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp(),
        }
    }
}

/// Per-vertex neighbors ranked by decreasing similarity (ties: lower index),
/// truncated to `k_max`.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    ranked: Vec<Vec<(usize, f64)>>,
    k_max: usize,
}

impl KnnIndex {
    pub fn build(states: &[Vec<f64>], k_max: usize, kernel: SimilarityKernel) -> Self {
        let n = states.len();
        let ranked = (0..n)
            .map(|i| {
                let mut sims: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, kernel.eval(&states[i], &states[j])))
                    .collect();
                let keep = k_max.min(sims.len());
                let cmp = |a: &(usize, f64), b: &(usize, f64)| {
                    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
                };
                if keep < sims.len() && keep > 0 {
                    sims.select_nth_unstable_by(keep - 1, cmp);
                }
                sims.truncate(keep);
                sims.sort_by(cmp);
                sims
            })
            .collect();
        KnnIndex { ranked, k_max }
    }

    pub fn graph(
        &self,
        vertices: Vec<Vec<f64>>,
        k: usize,
        symmetrization: Symmetrization,
    ) -> Result<StateGraph> {
        if k > self.k_max {
            return Err(SihdError::InvalidArgument(format!(
                "k = {k} exceeds indexed k_max = {}",
                self.k_max
            )));
        }
        let mut directed: HashMap<(usize, usize), f64> = HashMap::new();
        for (i, list) in self.ranked.iter().enumerate() {
            for &(j, w) in list.iter().take(k) {
                directed.insert((i, j), w);
            }
        }
        let mut edges = Vec::new();
        for (&(i, j), &w) in &directed {
            let reverse = directed.contains_key(&(j, i));
            let keep = match symmetrization {
                Symmetrization::Union => !reverse || i < j,
                Symmetrization::Intersection => reverse && i < j,
            };
            if keep {
                edges.push((i.min(j), i.max(j), w));
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        StateGraph::from_edges(vertices, edges)
    }
}

/// Exact k-NN graph, symmetrized by union.
pub fn build_knn_graph(states: &[Vec<f64>], k: usize, similarity: Similarity) -> Result<StateGraph> {
    build_knn_graph_with(states, k, similarity, Symmetrization::Union)
}

pub fn build_knn_graph_with(
    states: &[Vec<f64>],
    k: usize,
    similarity: Similarity,
    symmetrization: Symmetrization,
) -> Result<StateGraph> {
    check_k(states.len(), k)?;
    let kernel = SimilarityKernel::resolve(states, similarity)?;
    KnnIndex::build(states, k, kernel).graph(states.to_vec(), k, symmetrization)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(SihdError::InvalidArgument(format!(
            "k = {k} must satisfy 1 <= k < |S| = {n}"
        )));
    }
    Ok(())
}

/// Shannon entropy in bits of a non-negative mass vector (normalized
/// internally); zero entries contribute nothing.
pub fn shannon_entropy(masses: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.log2()
        })
        .sum()
}

/// One-dimensional structural entropy `H¹` in bits.
pub fn one_dim_entropy(graph: &StateGraph) -> Result<f64> {
    if graph.n_vertices() == 0 || graph.total_volume() <= 0.0 {
        return Err(SihdError::EmptyGraph);
    }
    Ok(shannon_entropy(graph.degrees()))
}

/// Pick the smallest `k` in `k_range` (inclusive) maximizing `H¹`.
pub fn select_k(
    states: &[Vec<f64>],
    k_range: (usize, usize),
    similarity: Similarity,
) -> Result<(usize, StateGraph)> {
    select_k_with(states, k_range, similarity, Symmetrization::Union)
}

pub fn select_k_with(
    states: &[Vec<f64>],
    k_range: (usize, usize),
    similarity: Similarity,
    symmetrization: Symmetrization,
) -> Result<(usize, StateGraph)> {
    let (lo, hi) = k_range;
    if lo > hi {
        return Err(SihdError::InvalidArgument(format!("empty k range [{lo}, {hi}]")));
    }
    check_k(states.len(), lo)?;
    check_k(states.len(), hi)?;
    let kernel = SimilarityKernel::resolve(states, similarity)?;
    let index = KnnIndex::build(states, hi, kernel);
    let mut best: Option<(usize, f64, StateGraph)> = None;
    for k in lo..=hi {
        let graph = index.graph(states.to_vec(), k, symmetrization)?;
        let h = one_dim_entropy(&graph)?;
        // strict improvement beyond rounding keeps the smallest k on ties
        if best.as_ref().is_none_or(|(_, bh, _)| h > bh + 1e-12) {
            best = Some((k, h, graph));
        }
    }
    let (k, _, graph) = best.expect("range is non-empty");
    Ok((k, graph))
}

/// Index of the vertex closest to `state` in Euclidean distance (ties: lower
/// index); `None` for an empty vertex set.
pub fn nearest_vertex(vertices: &[Vec<f64>], state: &[f64]) -> Option<usize> {
    let sq = |v: &[f64]| v.iter().zip(state).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..vertices.len()).min_by(|&a, &b| sq(&vertices[a]).total_cmp(&sq(&vertices[b])).then(a.cmp(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trajectory;

    fn ds(states: Vec<Vec<f64>>) -> Dataset {
        let n = states.len();
        Dataset::new(vec![Trajectory::new(states, vec![vec![0.0]; n], vec![0.0; n]).unwrap()])
            .unwrap()
    }

    #[test]
    fn dedupe_exact_duplicates() {
        let d = dedupe_states(&ds(vec![vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert_eq!(d.vertices.len(), 1);
        assert_eq!(d.index, vec![vec![0, 0]]);
    }

    #[test]
    fn dedupe_respects_tolerance() {
        let d = dedupe_states(&ds(vec![vec![0.0, 0.0], vec![0.0, 0.5]]), 0.1);
        assert_eq!(d.vertices.len(), 2);
        let d = dedupe_states(&ds(vec![vec![0.0, 0.0], vec![0.05, -0.05], vec![0.0, 0.09]]), 0.1);
        assert_eq!(d.vertices.len(), 1);
        assert_eq!(d.index, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn dedupe_negative_zero() {
        let d = dedupe_states(&ds(vec![vec![0.0], vec![-0.0]]), 0.0);
        assert_eq!(d.vertices.len(), 1);
    }

    #[test]
    fn collinear_points_form_a_path() {
        let states = vec![vec![0.0], vec![1.0], vec![2.0]];
        let g = build_knn_graph(&states, 1, Similarity::Rbf).unwrap();
        let edges: Vec<(usize, usize)> = g.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn saturated_k_gives_complete_graph() {
        let states: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let g = build_knn_graph(&states, 4, Similarity::Rbf).unwrap();
        assert_eq!(g.edge_count(), 10);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        let states = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            build_knn_graph(&states, 1, Similarity::Cosine),
            Err(SihdError::DegenerateSimilarity(_))
        ));
    }

    #[test]
    fn intersection_is_subset_of_union() {
        let states: Vec<Vec<f64>> = [0.0, 1.0, 1.5, 5.0, 5.2]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let u = build_knn_graph_with(&states, 1, Similarity::Rbf, Symmetrization::Union).unwrap();
        let i = build_knn_graph_with(&states, 1, Similarity::Rbf, Symmetrization::Intersection)
            .unwrap();
        for (a, b, _) in i.edges() {
            assert!(u.weight(a, b) > 0.0);
        }
        // 0 -> 1 is not reciprocated (1 prefers 2)
        assert!(u.weight(0, 1) > 0.0);
        assert_eq!(i.weight(0, 1), 0.0);
    }

    #[test]
    fn entropy_of_small_graphs() {
        let cycle =
            StateGraph::from_abstract_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
                .unwrap();
        assert!((one_dim_entropy(&cycle).unwrap() - 2.0).abs() < 1e-12);
        let edge = StateGraph::from_abstract_edges(2, [(0, 1, 1.0)]).unwrap();
        assert!((one_dim_entropy(&edge).unwrap() - 1.0).abs() < 1e-12);
        let star =
            StateGraph::from_abstract_edges(4, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        // (3/6)·1 + 3·(1/6)·log2 6
        let expected = 0.5 + 0.5 * 6f64.log2();
        assert!((one_dim_entropy(&star).unwrap() - expected).abs() < 1e-12);
        assert!((one_dim_entropy(&star).unwrap() - 1.79248).abs() < 1e-5);
        assert!(matches!(
            one_dim_entropy(&StateGraph::from_abstract_edges(0, []).unwrap()),
            Err(SihdError::EmptyGraph)
        ));
    }

    #[test]
    fn select_k_singleton_range() {
        let states: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.3 * i as f64]).collect();
        let (k, g) = select_k(&states, (3, 3), Similarity::Rbf).unwrap();
        assert_eq!(k, 3);
        assert_eq!(g, build_knn_graph(&states, 3, Similarity::Rbf).unwrap());
    }

    #[test]
    fn select_k_tie_returns_minimum() {
        // square corners: k=2 gives a 4-cycle, k=3 gives K4; both have uniform degrees
        let states = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let (k, _) = select_k(&states, (2, 3), Similarity::Rbf).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn select_k_rejects_bad_range() {
        let states: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        assert!(select_k(&states, (0, 2), Similarity::Rbf).is_err());
        assert!(select_k(&states, (2, 4), Similarity::Rbf).is_err());
        assert!(select_k(&states, (3, 2), Similarity::Rbf).is_err());
    }

    #[test]
    fn dense_requires_symmetry() {
        let v = vec![Vec::new(); 2];
        assert!(StateGraph::from_dense(v.clone(), &[0.0, 1.0, 2.0, 0.0]).is_err());
        let g = StateGraph::from_dense(v, &[5.0, 1.0, 1.0, 5.0]).unwrap();
        assert_eq!(g.total_volume(), 2.0);
    }
}
