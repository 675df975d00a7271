//! Encoding trees and structural entropy.
//!
//! An encoding tree is a hierarchy of vertex communities: the root covers every
//! vertex, each leaf holds exactly one vertex, and the children of an internal
//! node partition its vertex set. For a weighted graph with total volume
//! `vol(λ)`, the structural entropy of the graph under a tree is
//!
//! ```text
//! H(G; T) = - Σ_{α ≠ λ} (g_α / vol(λ)) · log2(vol(α) / vol(parent(α)))
//! ```
//!
//! where `vol(α)` is the degree sum over `α`'s vertices and `g_α` the weight
//! of edges leaving them. Each summand is the structural information gain of
//! its node. Entropies are in bits.
//!
//! Heights count down from the root: with tree height `K` (the deepest leaf
//! depth), a node at depth `d` has height `K - d`, so leaves of a balanced
//! tree sit at height 0 and the root at height `K`.

mod hcse;
mod reweighted;

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SihdError};
use crate::state_graph::StateGraph;

pub use hcse::{compress, hcse_optimize, hcse_optimize_traced, stretch, HcseTrace};
pub use reweighted::{
    bound_check, decomposed_entropy, layer_entropy, reweighted_entropy, BoundReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Set on leaves only.
    pub vertex: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingTree {
    nodes: Vec<TreeNode>,
    root: usize,
    /// Leaf node of every vertex.
    leaf_of: Vec<usize>,
}

/// Per-node volumes and cut weights of a tree evaluated on a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeStats {
    pub volume: Vec<f64>,
    pub cut: Vec<f64>,
    pub total_volume: f64,
}

impl EncodingTree {
    /// Root with one leaf per vertex.
    pub fn flat(n_vertices: usize) -> Self {
        let mut nodes = vec![TreeNode {
            parent: None,
            children: (1..=n_vertices).collect(),
            vertex: None,
        }];
        nodes.extend((0..n_vertices).map(|v| TreeNode {
            parent: Some(0),
            children: Vec::new(),
            vertex: Some(v),
        }));
        EncodingTree {
            nodes,
            root: 0,
            leaf_of: (1..=n_vertices).collect(),
        }
    }

    /// Root → one node per community → leaves. Communities must partition
    /// `0..n_vertices`.
    pub fn from_partition(n_vertices: usize, communities: &[Vec<usize>]) -> Result<Self> {
        let mut parents = vec![None];
        let mut leaf_vertex = vec![None];
        for _ in communities {
            parents.push(Some(0));
            leaf_vertex.push(None);
        }
        for (c, members) in communities.iter().enumerate() {
            for &v in members {
                parents.push(Some(c + 1));
                leaf_vertex.push(Some(v));
            }
        }
        Self::from_parents(n_vertices, &parents, &leaf_vertex)
    }

    /// Build from a parent array; children keep ascending id order. Exactly one
    /// node may lack a parent.
    pub fn from_parents(
        n_vertices: usize,
        parents: &[Option<usize>],
        leaf_vertex: &[Option<usize>],
    ) -> Result<Self> {
        if parents.len() != leaf_vertex.len() {
            return Err(SihdError::InvalidTree("parent and vertex arrays differ in length".into()));
        }
        let mut nodes: Vec<TreeNode> = parents
            .iter()
            .zip(leaf_vertex)
            .map(|(&parent, &vertex)| TreeNode {
                parent,
                children: Vec::new(),
                vertex,
            })
            .collect();
        let mut root = None;
        for (id, &p) in parents.iter().enumerate() {
            match p {
                None if root.is_some() => {
                    return Err(SihdError::InvalidTree("more than one root".into()))
                }
                None => root = Some(id),
                Some(p) if p >= nodes.len() || p == id => {
                    return Err(SihdError::InvalidTree(format!("node {id} has invalid parent {p}")))
                }
                Some(p) => nodes[p].children.push(id),
            }
        }
        let root = root.ok_or_else(|| SihdError::InvalidTree("no root".into()))?;
        let mut leaf_of = vec![usize::MAX; n_vertices];
        for (id, node) in nodes.iter().enumerate() {
            if let Some(v) = node.vertex {
                if v >= n_vertices {
                    return Err(SihdError::InvalidTree(format!("leaf {id} holds unknown vertex {v}")));
                }
                if leaf_of[v] != usize::MAX {
                    return Err(SihdError::InvalidTree(format!("vertex {v} appears twice")));
                }
                leaf_of[v] = id;
            }
        }
        let tree = EncodingTree {
            nodes,
            root,
            leaf_of,
        };
        tree.validate(n_vertices)?;
        Ok(tree)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn leaf_of(&self, vertex: usize) -> usize {
        self.leaf_of[vertex]
    }

    pub fn depth(&self, mut id: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            id = p;
            d += 1;
        }
        d
    }

    /// Depth of every node, computed top-down.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            for &c in &self.nodes[id].children {
                depth[c] = depth[id] + 1;
                queue.push_back(c);
            }
        }
        depth
    }

    /// Depth of the deepest leaf.
    pub fn height(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    /// `height() - depth(id)` for every node.
    pub fn node_heights(&self) -> Vec<usize> {
        let depths = self.depths();
        let h = depths.iter().copied().max().unwrap_or(0);
        depths.into_iter().map(|d| h - d).collect()
    }

    /// Vertices covered by a node, ascending.
    pub fn vertex_set(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            let node = &self.nodes[x];
            if let Some(v) = node.vertex {
                out.push(v);
            }
            stack.extend(node.children.iter().copied());
        }
        out.sort_unstable();
        out
    }

    /// Nodes of every height, ascending id within a height. Index = height.
    pub fn layers(&self) -> Vec<Vec<usize>> {
        let heights = self.node_heights();
        let mut out = vec![Vec::new(); self.height() + 1];
        for (id, &h) in heights.iter().enumerate() {
            out[h].push(id);
        }
        out
    }

    /// Check the four structural properties against a vertex count.
    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        if self.leaf_of.len() != n_vertices {
            return Err(SihdError::VertexMismatch {
                tree: self.leaf_of.len(),
                graph: n_vertices,
            });
        }
        if self.nodes[self.root].parent.is_some() {
            return Err(SihdError::InvalidTree("root has a parent".into()));
        }
        // reachability from the root, exactly once per node
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(SihdError::InvalidTree(format!("node {id} reached twice")));
            }
            for &c in &self.nodes[id].children {
                if self.nodes[c].parent != Some(id) {
                    return Err(SihdError::InvalidTree(format!(
                        "child {c} does not point back to {id}"
                    )));
                }
                queue.push_back(c);
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(SihdError::InvalidTree(format!("node {id} unreachable from root")));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            match (node.children.is_empty(), node.vertex) {
                (true, None) => {
                    return Err(SihdError::InvalidTree(format!("leaf {id} holds no vertex")))
                }
                (false, Some(_)) => {
                    return Err(SihdError::InvalidTree(format!(
                        "internal node {id} holds a vertex"
                    )))
                }
                _ => {}
            }
        }
        // leaves are singletons and distinct, so child vertex sets are disjoint
        // and every node's set is the union of its children's
        let mut covered = vec![false; n_vertices];
        for (v, &leaf) in self.leaf_of.iter().enumerate() {
            if leaf >= self.nodes.len() || self.nodes[leaf].vertex != Some(v) {
                return Err(SihdError::InvalidTree(format!("vertex {v} has no leaf")));
            }
            covered[v] = true;
        }
        let leaves = self.nodes.iter().filter(|n| n.vertex.is_some()).count();
        if leaves != n_vertices || covered.iter().any(|c| !c) {
            return Err(SihdError::InvalidTree("root does not cover every vertex once".into()));
        }
        Ok(())
    }

    /// Renumber nodes breadth-first from the root (root becomes 0), keeping
    /// child order.
    pub fn compacted(&self) -> EncodingTree {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(self.nodes[id].children.iter().copied());
        }
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }
        let nodes: Vec<TreeNode> = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                TreeNode {
                    parent: n.parent.map(|p| new_id[p]),
                    children: n.children.iter().map(|&c| new_id[c]).collect(),
                    vertex: n.vertex,
                }
            })
            .collect();
        let leaf_of = self.leaf_of.iter().map(|&l| new_id[l]).collect();
        EncodingTree {
            nodes,
            root: 0,
            leaf_of,
        }
    }

    /// Volumes and cut weights of every node on `graph`.
    pub fn stats(&self, graph: &StateGraph) -> Result<TreeStats> {
        self.check_graph(graph)?;
        let mut volume = vec![0.0; self.nodes.len()];
        for v in 0..graph.n_vertices() {
            let mut x = Some(self.leaf_of[v]);
            while let Some(id) = x {
                volume[id] += graph.degree(v);
                x = self.nodes[id].parent;
            }
        }
        let depth = self.depths();
        let mut cut = vec![0.0; self.nodes.len()];
        for (i, j, w) in graph.edges() {
            let (mut a, mut b) = (self.leaf_of[i], self.leaf_of[j]);
            while depth[a] > depth[b] {
                cut[a] += w;
                a = self.nodes[a].parent.expect("non-root has parent");
            }
            while depth[b] > depth[a] {
                cut[b] += w;
                b = self.nodes[b].parent.expect("non-root has parent");
            }
            while a != b {
                cut[a] += w;
                cut[b] += w;
                a = self.nodes[a].parent.expect("non-root has parent");
                b = self.nodes[b].parent.expect("non-root has parent");
            }
        }
        Ok(TreeStats {
            volume,
            cut,
            total_volume: graph.total_volume(),
        })
    }

    fn check_graph(&self, graph: &StateGraph) -> Result<()> {
        if graph.n_vertices() != self.n_vertices() {
            return Err(SihdError::VertexMismatch {
                tree: self.n_vertices(),
                graph: graph.n_vertices(),
            });
        }
        Ok(())
    }

    /// Serializable form, optionally annotated with the graph's per-node stats
    /// and vertex coordinates.
    pub fn to_file(&self, graph: Option<&StateGraph>) -> Result<TreeFile> {
        let stats = graph.map(|g| self.stats(g)).transpose()?;
        let heights = self.node_heights();
        let nodes = (0..self.nodes.len())
            .map(|id| NodeRecord {
                id,
                parent: self.nodes[id].parent,
                height: heights[id],
                vertices: self.nodes[id].vertex.map(|v| vec![v]),
                volume: stats.as_ref().map(|s| s.volume[id]),
                cut: stats.as_ref().map(|s| s.cut[id]),
            })
            .collect();
        Ok(TreeFile {
            n_vertices: self.n_vertices(),
            total_volume: stats.as_ref().map(|s| s.total_volume),
            vertices: graph.map(|g| g.vertices().to_vec()),
            nodes,
        })
    }

    pub fn from_file(file: &TreeFile) -> Result<EncodingTree> {
        let mut parents = vec![None; file.nodes.len()];
        let mut leaf_vertex = vec![None; file.nodes.len()];
        for (pos, rec) in file.nodes.iter().enumerate() {
            if rec.id != pos {
                return Err(SihdError::InvalidTree(format!(
                    "node ids must be dense and ordered; found {} at {pos}",
                    rec.id
                )));
            }
            parents[pos] = rec.parent;
            leaf_vertex[pos] = match rec.vertices.as_deref() {
                None => None,
                Some([v]) => Some(*v),
                Some(other) => {
                    return Err(SihdError::InvalidTree(format!(
                        "leaf {pos} lists {} vertices",
                        other.len()
                    )))
                }
            };
        }
        EncodingTree::from_parents(file.n_vertices, &parents, &leaf_vertex)
    }
}

/// On-disk tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub n_vertices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vec<f64>>>,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut: Option<f64>,
}

impl TreeFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| SihdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TreeFile> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SihdError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Stored per-node stats, if the file carries them.
    pub fn stats(&self) -> Option<TreeStats> {
        let volume = self.nodes.iter().map(|n| n.volume).collect::<Option<Vec<_>>>()?;
        let cut = self.nodes.iter().map(|n| n.cut).collect::<Option<Vec<_>>>()?;
        Some(TreeStats {
            volume,
            cut,
            total_volume: self.total_volume?,
        })
    }
}

/// Root with one leaf child per vertex of `graph`.
pub fn flat_tree(graph: &StateGraph) -> EncodingTree {
    EncodingTree::flat(graph.n_vertices())
}

fn entropy_term(cut: f64, vol: f64, parent_vol: f64, total: f64) -> f64 {
    if cut <= 0.0 || vol <= 0.0 || parent_vol <= 0.0 || vol >= parent_vol {
        return 0.0;
    }
    -(cut / total) * (vol / parent_vol).log2()
}

/// Structural information gain of a non-root node from precomputed stats.
pub fn node_gain_from_stats(tree: &EncodingTree, stats: &TreeStats, alpha: usize) -> Result<f64> {
    let parent = tree.parent(alpha).ok_or(SihdError::RootNode)?;
    if stats.total_volume <= 0.0 {
        return Ok(0.0);
    }
    Ok(entropy_term(
        stats.cut[alpha],
        stats.volume[alpha],
        stats.volume[parent],
        stats.total_volume,
    ))
}

/// Structural information gain `-(g_α/vol(λ)) log2(vol(α)/vol(α⁻))` of `alpha`.
pub fn node_gain(graph: &StateGraph, tree: &EncodingTree, alpha: usize) -> Result<f64> {
    if tree.parent(alpha).is_none() {
        return Err(SihdError::RootNode);
    }
    node_gain_from_stats(tree, &tree.stats(graph)?, alpha)
}

/// Structural entropy of `graph` under `tree`, in bits.
pub fn tree_entropy(graph: &StateGraph, tree: &EncodingTree) -> Result<f64> {
    let stats = tree.stats(graph)?;
    Ok(entropy_from_stats(tree, &stats))
}

pub(crate) fn entropy_from_stats(tree: &EncodingTree, stats: &TreeStats) -> f64 {
    if stats.total_volume <= 0.0 {
        return 0.0;
    }
    (0..tree.n_nodes())
        .filter_map(|id| tree.parent(id).map(|p| (id, p)))
        .map(|(id, p)| {
            entropy_term(stats.cut[id], stats.volume[id], stats.volume[p], stats.total_volume)
        })
        .sum()
}

/// Community assignment at one height of a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    pub height: usize,
    /// Distinct community nodes, ascending id.
    pub nodes: Vec<usize>,
    /// `community[v]` is the node containing vertex `v`.
    pub community: Vec<usize>,
}

impl LayerPartition {
    pub fn community_of(&self, vertex: usize) -> Option<usize> {
        self.community.get(vertex).copied()
    }
}

/// Communities at height `h` (`1 <= h < height`). Vertices on branches shorter
/// than the tree height map to their deepest ancestor of height at least `h`.
pub fn layer_partition(tree: &EncodingTree, h: usize) -> Result<LayerPartition> {
    let max = tree.height();
    if h == 0 || h >= max {
        return Err(SihdError::HeightOutOfRange { height: h, max });
    }
    Ok(layer_partition_unchecked(tree, &tree.node_heights(), h))
}

pub(crate) fn layer_partition_unchecked(
    tree: &EncodingTree,
    heights: &[usize],
    h: usize,
) -> LayerPartition {
    let community: Vec<usize> = (0..tree.n_vertices())
        .map(|v| {
            let mut x = tree.leaf_of(v);
            while heights[x] < h {
                x = tree.parent(x).expect("root height is maximal");
            }
            x
        })
        .collect();
    let nodes: BTreeSet<usize> = community.iter().copied().collect();
    LayerPartition {
        height: h,
        nodes: nodes.into_iter().collect(),
        community,
    }
}
