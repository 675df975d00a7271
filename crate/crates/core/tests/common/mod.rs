//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the entropy code under test: volumes, cuts and
//! entropies are recomputed from raw edge lists and parent arrays.

#![allow(dead_code)]

pub mod stack;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sihd_core::encoding_tree::{layer_partition, EncodingTree};
use sihd_core::segmentation::SegmentHierarchy;
use sihd_core::state_graph::StateGraph;

pub type Edges = Vec<(usize, usize, f64)>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Random simple graph on `n` vertices; each pair is an edge with
/// probability `p` and weight uniform in `[0.1, 2)`. Guarantees at least one
/// edge.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Edges {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, rng.random_range(0.1..2.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1, 1.0));
    }
    edges
}

pub fn graph(n: usize, edges: &Edges) -> StateGraph {
    StateGraph::from_abstract_edges(n, edges.iter().copied()).unwrap()
}

/// Random valid tree as a parent array plus leaf vertices. Internal nodes
/// are created by recursively splitting vertex sets at random.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let mut parents = vec![None];
    let mut vertex = vec![None];
    let mut stack = vec![(0usize, (0..n).collect::<Vec<_>>())];
    while let Some((node, mut set)) = stack.pop() {
        if set.len() == 1 && node != 0 {
            vertex[node] = Some(set[0]);
            continue;
        }
        // shuffle then cut into 1..=min(4, |set|) non-empty blocks; a block
        // equal to the whole set is only allowed below the root once
        for i in (1..set.len()).rev() {
            let j = rng.random_range(0..=i);
            set.swap(i, j);
        }
        let max_parts = set.len().min(4);
        let parts = if set.len() == 1 {
            1
        } else {
            rng.random_range(2..=max_parts.max(2))
        };
        let mut cuts: Vec<usize> = (1..set.len()).collect();
        for i in (1..cuts.len()).rev() {
            let j = rng.random_range(0..=i);
            cuts.swap(i, j);
        }
        let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
        cuts.sort_unstable();
        let mut start = 0;
        for end in cuts.into_iter().chain([set.len()]) {
            let child = parents.len();
            parents.push(Some(node));
            vertex.push(None);
            stack.push((child, set[start..end].to_vec()));
            start = end;
        }
    }
    (parents, vertex)
}

/// Vertex set of every node, by walking parent links up from each leaf.
pub fn node_sets(parents: &[Option<usize>], vertex: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); parents.len()];
    for (leaf, v) in vertex.iter().enumerate() {
        if let Some(v) = v {
            let mut x = Some(leaf);
            while let Some(id) = x {
                sets[id].push(*v);
                x = parents[id];
            }
        }
    }
    sets
}

/// Literal tree entropy: `-Σ_{α≠λ} (g_α / vol) log2(vol(α)/vol(α⁻))`.
pub fn literal_entropy(
    n: usize,
    edges: &Edges,
    parents: &[Option<usize>],
    vertex: &[Option<usize>],
) -> f64 {
    let mut degree = vec![0.0; n];
    for &(i, j, w) in edges {
        degree[i] += w;
        degree[j] += w;
    }
    let total: f64 = degree.iter().sum();
    let sets = node_sets(parents, vertex);
    let vol = |set: &[usize]| set.iter().map(|&v| degree[v]).sum::<f64>();
    let mut h = 0.0;
    for (id, p) in parents.iter().enumerate() {
        let Some(p) = p else { continue };
        let set = &sets[id];
        let cut: f64 = edges
            .iter()
            .filter(|(i, j, _)| set.contains(i) != set.contains(j))
            .map(|e| e.2)
            .sum();
        let (va, vp) = (vol(set), vol(&sets[*p]));
        if cut > 0.0 && va > 0.0 {
            h -= cut / total * (va / vp).log2();
        }
    }
    h
}

/// Every set partition of `0..n` as a label vector (restricted growth).
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, labels: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max + 1 {
            labels.push(l);
            rec(i + 1, n, labels, max.max(l), out);
            labels.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut labels = vec![0];
    rec(1, n, &mut labels, 0, &mut out);
    out
}

/// Entropy of the two-level tree root → communities → leaves.
pub fn two_level_entropy(n: usize, edges: &Edges, labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let mut parents = vec![None];
    let mut vertex = vec![None];
    for _ in 0..k {
        parents.push(Some(0));
        vertex.push(None);
    }
    for (v, &l) in labels.iter().enumerate() {
        parents.push(Some(1 + l));
        vertex.push(Some(v));
    }
    literal_entropy(n, edges, &parents, &vertex)
}

/// Minimum entropy over all two-level trees (including the all-in-one and
/// all-singleton partitions) and one minimizing labeling.
pub fn exhaustive_two_level(n: usize, edges: &Edges) -> (f64, Vec<usize>) {
    set_partitions(n)
        .into_iter()
        .map(|labels| (two_level_entropy(n, edges, &labels), labels))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Communities of the children of the root as sorted vertex lists, sorted.
pub fn root_communities(tree: &EncodingTree) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> =
        tree.children(tree.root()).iter().map(|&c| tree.vertex_set(c)).collect();
    out.sort();
    out
}

pub fn clique(offset: usize, n: usize, w: f64) -> Edges {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            e.push((offset + i, offset + j, w));
        }
    }
    e
}

/// Micro fixtures of at most 8 vertices: named edge lists.
pub fn micro_fixtures() -> Vec<(String, usize, Edges)> {
    let mut out = Vec::new();
    let mut two = clique(0, 4, 1.0);
    two.extend(clique(4, 4, 1.0));
    two.push((3, 4, 1.0));
    out.push(("two 4-cliques + bridge".to_string(), 8, two));
    let mut tri = clique(0, 3, 1.0);
    tri.extend(clique(3, 3, 1.0));
    tri.push((2, 3, 1.0));
    out.push(("two triangles + bridge".to_string(), 6, tri));
    for n in 3..=8 {
        out.push((format!("path {n}"), n, (0..n - 1).map(|i| (i, i + 1, 1.0)).collect()));
        out.push((format!("cycle {n}"), n, (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect()));
        out.push((format!("star {n}"), n, (1..n).map(|i| (0, i, 1.0)).collect()));
        out.push((format!("complete {n}"), n, clique(0, n, 1.0)));
    }
    // planted blocks {0,1,2} {3,4,5} {6,7}
    let mut planted = clique(0, 3, 5.0);
    planted.extend(clique(3, 3, 5.0));
    planted.extend(clique(6, 2, 5.0));
    planted.extend([(2, 3, 0.5), (5, 6, 0.5), (0, 7, 0.5)]);
    out.push(("planted 3-3-2 blocks".to_string(), 8, planted));
    let mut r = rng(2024);
    for i in 0..12 {
        let n = 5 + i % 4;
        out.push((format!("random {i} (n = {n})"), n, random_edges(n, 0.45, &mut r)));
    }
    out
}

pub fn random_case(r: &mut impl Rng) -> (EncodingTree, Vec<usize>) {
    loop {
        let n = 3 + r.random_range(0..10usize);
        let (parents, vertex) = random_tree(n, r);
        let tree = EncodingTree::from_parents(n, &parents, &vertex).unwrap();
        if tree.height() < 2 {
            continue;
        }
        let len = 1 + r.random_range(0..40usize);
        // random walk that mostly stays put so segments have some length
        let mut ids = vec![r.random_range(0..n)];
        for _ in 1..len {
            let last = *ids.last().unwrap();
            ids.push(if r.random::<f64>() < 0.6 { last } else { r.random_range(0..n) });
        }
        return (tree, ids);
    }
}

/// Every structural invariant, checked against direct scans of the input.
pub fn check_hierarchy(tree: &EncodingTree, ids: &[usize], hier: &SegmentHierarchy) {
    let k = tree.height();
    assert_eq!(hier.layers.len(), k - 1);
    for h in 1..k {
        let lp = layer_partition(tree, h).unwrap();
        let segs = hier.layer(h);
        // reconstruction: slices tile 0..T in order
        let tiled: Vec<usize> = segs.iter().flat_map(|s| s.start..s.end).collect();
        assert_eq!(tiled, (0..ids.len()).collect::<Vec<_>>());
        for s in segs {
            assert!(s.len() >= 1);
            assert!((s.start..s.end).all(|t| lp.community[ids[t]] == s.community));
        }
        if h + 1 < k {
            let fine = hier.boundaries(h);
            assert!(hier.boundaries(h + 1).iter().all(|b| fine.contains(b)));
        }
        if h > 1 {
            let total: usize = (0..segs.len()).map(|i| hier.child_sequence(h, i).len()).sum();
            assert_eq!(total, hier.subgoals(h - 1).len());
        }
    }
    assert_eq!(hier.top_sequence().last(), Some(&(ids.len() - 1)));
}

/// Encoding-tree properties: valid links, full root, singleton leaves,
/// children partitioning their parent.
pub fn check_properties(t: &EncodingTree, n: usize) {
    t.validate(n).unwrap();
    assert_eq!(t.vertex_set(t.root()), (0..n).collect::<Vec<_>>());
    for id in 0..t.n_nodes() {
        if t.is_leaf(id) {
            assert_eq!(t.vertex_set(id).len(), 1);
        } else {
            let mut union: Vec<usize> =
                t.children(id).iter().flat_map(|&c| t.vertex_set(c)).collect();
            let len = union.len();
            union.sort_unstable();
            union.dedup();
            assert_eq!(union.len(), len, "children overlap");
            assert_eq!(union, t.vertex_set(id));
        }
    }
}
