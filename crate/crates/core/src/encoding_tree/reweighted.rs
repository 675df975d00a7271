//! Entropy of a reweighted state graph under a fixed tree, and the sandwich
//! bound relating it to the Shannon entropy of the visitation distribution.
//!
//! With `p(s) = Σ_i w(i, s)` as the visitation mass of state `s`, `H(S)` is the
//! Shannon entropy of `p`, `H(U_h)` the entropy of the community masses at
//! height `h`, and `η_h` the largest fraction `(Σ_i g_{α_i} − g_α)/vol(α)` over
//! height-`h` nodes. Then
//!
//! ```text
//! H(S) − Σ_h η_h · H(U_h)  ≤  H(G'; T)  ≤  H(S)
//! ```

use super::{layer_partition_unchecked, EncodingTree};
use crate::error::{Result, SihdError};
use crate::state_graph::{shannon_entropy, StateGraph};

/// Outcome of a bound evaluation. `eta[h - 1]` and `layer_entropies[h - 1]`
/// belong to height `h`, for `h = 1..height`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub eta: Vec<f64>,
    pub layer_entropies: Vec<f64>,
}

impl BoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower <= self.value + tol && self.value <= self.upper + tol
    }
}

fn check(graph: &StateGraph, tree: &EncodingTree) -> Result<()> {
    if graph.n_vertices() != tree.n_vertices() {
        return Err(SihdError::VertexMismatch {
            tree: tree.n_vertices(),
            graph: graph.n_vertices(),
        });
    }
    Ok(())
}

/// Tree entropy evaluated term by term from incoming edge weights:
/// `−Σ_{α≠λ} (Σ_{i∉α, j∈α} w(i,j) / Σ_s p(s)) · log2(Σ_{j∈α} p(j) / Σ_{j∈α⁻} p(j))`.
pub fn reweighted_entropy(graph: &StateGraph, tree: &EncodingTree) -> Result<f64> {
    check(graph, tree)?;
    let p: Vec<f64> = (0..graph.n_vertices())
        .map(|s| graph.neighbors(s).iter().map(|&(_, w)| w).sum())
        .collect();
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let sets: Vec<Vec<usize>> = (0..tree.n_nodes()).map(|id| tree.vertex_set(id)).collect();
    let mass = |set: &[usize]| set.iter().map(|&j| p[j]).sum::<f64>();
    let mut member = vec![false; graph.n_vertices()];
    let mut h = 0.0;
    for id in 0..tree.n_nodes() {
        let Some(parent) = tree.parent(id) else { continue };
        for &j in &sets[id] {
            member[j] = true;
        }
        let incoming: f64 = sets[id]
            .iter()
            .flat_map(|&j| graph.neighbors(j).iter())
            .filter(|&&(i, _)| !member[i])
            .map(|&(_, w)| w)
            .sum();
        for &j in &sets[id] {
            member[j] = false;
        }
        let (vol, vol_parent) = (mass(&sets[id]), mass(&sets[parent]));
        if incoming > 0.0 && vol > 0.0 && vol_parent > 0.0 {
            h -= incoming / total * (vol / vol_parent).log2();
        }
    }
    Ok(h)
}

/// `H(S) − Σ_α ((g_α − Σ_i g_{α_i}) / vol(λ)) · log2(vol(α)/vol(λ))` over
/// internal non-root nodes; equals the tree entropy on graphs without
/// self-loops.
pub fn decomposed_entropy(graph: &StateGraph, tree: &EncodingTree) -> Result<f64> {
    let stats = tree.stats(graph)?;
    let total = stats.total_volume;
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut h = shannon_entropy(graph.degrees());
    for id in 0..tree.n_nodes() {
        if id == tree.root() || tree.is_leaf(id) || stats.volume[id] <= 0.0 {
            continue;
        }
        let child_cuts: f64 = tree.children(id).iter().map(|&c| stats.cut[c]).sum();
        h -= (stats.cut[id] - child_cuts) / total * (stats.volume[id] / total).log2();
    }
    Ok(h)
}

/// Shannon entropy of the community masses at height `h`.
pub fn layer_entropy(graph: &StateGraph, tree: &EncodingTree, h: usize) -> Result<f64> {
    check(graph, tree)?;
    let max = tree.height();
    if h == 0 || h >= max {
        return Err(SihdError::HeightOutOfRange { height: h, max });
    }
    Ok(layer_entropy_at(graph, tree, &tree.node_heights(), h))
}

fn layer_entropy_at(graph: &StateGraph, tree: &EncodingTree, heights: &[usize], h: usize) -> f64 {
    let lp = layer_partition_unchecked(tree, heights, h);
    let mut mass = vec![0.0; tree.n_nodes()];
    for (v, &c) in lp.community.iter().enumerate() {
        mass[c] += graph.degree(v);
    }
    shannon_entropy(&mass)
}

/// Evaluate both sides of the sandwich bound.
pub fn bound_check(graph: &StateGraph, tree: &EncodingTree) -> Result<BoundReport> {
    check(graph, tree)?;
    let value = reweighted_entropy(graph, tree)?;
    let upper = shannon_entropy(graph.degrees());
    let stats = tree.stats(graph)?;
    let heights = tree.node_heights();
    let height = tree.height();
    let mut eta = Vec::new();
    let mut layer_entropies = Vec::new();
    for h in 1..height {
        let e = (0..tree.n_nodes())
            .filter(|&id| heights[id] == h && !tree.is_leaf(id) && stats.volume[id] > 0.0)
            .map(|id| {
                let child_cuts: f64 = tree.children(id).iter().map(|&c| stats.cut[c]).sum();
                (child_cuts - stats.cut[id]) / stats.volume[id]
            })
            .fold(0.0, f64::max);
        eta.push(e);
        layer_entropies.push(layer_entropy_at(graph, tree, &heights, h));
    }
    let lower = upper - eta.iter().zip(&layer_entropies).map(|(e, h)| e * h).sum::<f64>();
    Ok(BoundReport {
        lower,
        value,
        upper,
        eta,
        layer_entropies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding_tree::{flat_tree, tree_entropy};

    fn sample() -> StateGraph {
        StateGraph::from_abstract_edges(
            5,
            [(0, 1, 0.5), (1, 2, 1.5), (2, 3, 0.25), (3, 4, 2.0), (0, 4, 0.7), (1, 3, 0.1)],
        )
        .unwrap()
    }

    #[test]
    fn reweighted_matches_tree_entropy() {
        let g = sample();
        let t = EncodingTree::from_partition(5, &[vec![0, 1, 2], vec![3, 4]]).unwrap();
        let a = reweighted_entropy(&g, &t).unwrap();
        let b = tree_entropy(&g, &t).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((decomposed_entropy(&g, &t).unwrap() - b).abs() < 1e-12);
    }

    #[test]
    fn flat_tree_bounds_collapse() {
        let g = sample();
        let r = bound_check(&g, &flat_tree(&g)).unwrap();
        assert!(r.eta.is_empty());
        assert_eq!(r.lower, r.upper);
        assert!((r.value - r.upper).abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_on_two_level_tree() {
        let g = sample();
        let t = EncodingTree::from_partition(5, &[vec![0, 4], vec![1, 2, 3]]).unwrap();
        let r = bound_check(&g, &t).unwrap();
        assert!(r.holds(1e-9), "{r:?}");
        assert_eq!(r.eta.len(), 1);
    }

    #[test]
    fn mismatch_is_reported() {
        let g = sample();
        let t = EncodingTree::flat(4);
        assert!(matches!(
            reweighted_entropy(&g, &t),
            Err(SihdError::VertexMismatch { tree: 4, graph: 5 })
        ));
        assert!(bound_check(&g, &t).is_err());
    }
}
