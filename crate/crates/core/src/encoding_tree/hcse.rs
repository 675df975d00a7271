//! Greedy hierarchical optimization of structural entropy.
//!
//! Inserting a community `C` (a set of sibling units under `α`) lowers the
//! entropy by `2·W(C)/vol(λ) · log2(vol(α)/vol(C))`, where `W(C)` is the edge
//! weight between distinct units of `C`. Stretch builds a binary merge tree
//! over the units, merging the adjacent pair whose union lowers the entropy
//! the most; compress picks the best cut of that merge tree by dynamic
//! programming and polishes it with single-unit moves and group merges,
//! leaving `α` → communities → units.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::{entropy_from_stats, tree_entropy, EncodingTree, TreeStats};
use crate::error::{Result, SihdError};
use crate::state_graph::StateGraph;

/// Entropy after each accepted iteration, starting with the flat tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HcseTrace {
    pub entropies: Vec<f64>,
    /// Height of the layer refined at each iteration.
    pub refined: Vec<usize>,
}

struct Cluster {
    vol: f64,
    internal: f64,
    children: Option<(usize, usize)>,
    alive: bool,
    nbrs: BTreeMap<usize, f64>,
}

/// Binary merge forest over the units of one node. Clusters `0..n_units` are
/// the units themselves.
struct Dendrogram {
    n_units: usize,
    clusters: Vec<Cluster>,
    vol_alpha: f64,
    total: f64,
}

#[derive(PartialEq)]
struct Candidate {
    delta: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Dendrogram {
    fn reduction(&self, vol: f64, internal: f64) -> f64 {
        if internal <= 0.0 || vol <= 0.0 || vol >= self.vol_alpha || self.total <= 0.0 {
            return 0.0;
        }
        2.0 * internal / self.total * (self.vol_alpha / vol).log2()
    }

    fn red(&self, c: usize) -> f64 {
        self.reduction(self.clusters[c].vol, self.clusters[c].internal)
    }

    fn merge_delta(&self, a: usize, b: usize, w: f64) -> f64 {
        let (ca, cb) = (&self.clusters[a], &self.clusters[b]);
        self.reduction(ca.vol + cb.vol, ca.internal + cb.internal + w) - self.red(a) - self.red(b)
    }

    fn build(units: &UnitGraph) -> Dendrogram {
        let clusters = (0..units.vol.len())
            .map(|u| Cluster {
                vol: units.vol[u],
                internal: 0.0,
                children: None,
                alive: true,
                nbrs: units.adj[u].iter().copied().collect(),
            })
            .collect();
        let mut d = Dendrogram {
            n_units: units.vol.len(),
            clusters,
            vol_alpha: units.vol_alpha,
            total: units.total,
        };
        d.agglomerate();
        d
    }

    fn agglomerate(&mut self) {
        let mut heap = BinaryHeap::new();
        for a in 0..self.clusters.len() {
            for (&b, &w) in &self.clusters[a].nbrs {
                if a < b && w > 0.0 {
                    heap.push(Candidate {
                        delta: self.merge_delta(a, b, w),
                        a,
                        b,
                    });
                }
            }
        }
        while let Some(Candidate { a, b, .. }) = heap.pop() {
            if !self.clusters[a].alive || !self.clusters[b].alive {
                continue;
            }
            let id = self.clusters.len();
            let na = std::mem::take(&mut self.clusters[a].nbrs);
            let nb = std::mem::take(&mut self.clusters[b].nbrs);
            let w_ab = na.get(&b).copied().unwrap_or(0.0);
            self.clusters[a].alive = false;
            self.clusters[b].alive = false;
            let mut nbrs = BTreeMap::new();
            for (x, w) in na.into_iter().chain(nb) {
                if x != a && x != b {
                    *nbrs.entry(x).or_insert(0.0) += w;
                }
            }
            for (&x, &w) in &nbrs {
                let n = &mut self.clusters[x].nbrs;
                n.remove(&a);
                n.remove(&b);
                n.insert(id, w);
            }
            self.clusters.push(Cluster {
                vol: self.clusters[a].vol + self.clusters[b].vol,
                internal: self.clusters[a].internal + self.clusters[b].internal + w_ab,
                children: Some((a, b)),
                alive: true,
                nbrs,
            });
            let pending: Vec<(usize, f64)> =
                self.clusters[id].nbrs.iter().map(|(&x, &w)| (x, w)).collect();
            for (x, w) in pending {
                if w > 0.0 {
                    heap.push(Candidate {
                        delta: self.merge_delta(x.min(id), x.max(id), w),
                        a: x.min(id),
                        b: x.max(id),
                    });
                }
            }
        }
    }

    fn roots(&self) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&c| self.clusters[c].alive).collect()
    }

    fn units_under(&self, c: usize, out: &mut Vec<usize>) {
        match self.clusters[c].children {
            None => out.push(c),
            Some((a, b)) => {
                self.units_under(a, out);
                self.units_under(b, out);
            }
        }
    }

    /// Best cut of the merge forest: groups of unit indices.
    fn best_groups(&self) -> Vec<Vec<usize>> {
        let n = self.clusters.len();
        let mut best = vec![0.0; n];
        let mut keep = vec![true; n];
        for c in self.n_units..n {
            let (a, b) = self.clusters[c].children.expect("merged cluster");
            let split = best[a] + best[b];
            let own = self.red(c);
            if own >= split {
                best[c] = own;
            } else {
                best[c] = split;
                keep[c] = false;
            }
        }
        let mut groups = Vec::new();
        let mut stack: Vec<usize> = self.roots().into_iter().rev().collect();
        while let Some(c) = stack.pop() {
            if keep[c] {
                let mut g = Vec::new();
                self.units_under(c, &mut g);
                g.sort_unstable();
                groups.push(g);
            } else {
                let (a, b) = self.clusters[c].children.expect("split cluster");
                stack.push(b);
                stack.push(a);
            }
        }
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

/// Units under one node with their volumes and inter-unit weights.
struct UnitGraph {
    vol: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
    vol_alpha: f64,
    total: f64,
}

impl UnitGraph {
    fn build(
        graph: &StateGraph,
        tree: &EncodingTree,
        stats: &TreeStats,
        alpha: usize,
        units: &[usize],
    ) -> UnitGraph {
        let mut unit_of = vec![usize::MAX; graph.n_vertices()];
        let unit_vertices: Vec<Vec<usize>> = units.iter().map(|&u| tree.vertex_set(u)).collect();
        for (u, verts) in unit_vertices.iter().enumerate() {
            for &v in verts {
                unit_of[v] = u;
            }
        }
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); units.len()];
        for (u, verts) in unit_vertices.iter().enumerate() {
            for &v in verts {
                for &(x, w) in graph.neighbors(v) {
                    let b = unit_of[x];
                    if b != usize::MAX && b != u && w > 0.0 {
                        *adj[u].entry(b).or_insert(0.0) += w;
                    }
                }
            }
        }
        UnitGraph {
            vol: units.iter().map(|&u| stats.volume[u]).collect(),
            adj: adj.into_iter().map(|m| m.into_iter().collect()).collect(),
            vol_alpha: stats.volume[alpha],
            total: stats.total_volume,
        }
    }

    fn reduction(&self, vol: f64, internal: f64) -> f64 {
        if internal <= 0.0 || vol <= 0.0 || vol >= self.vol_alpha || self.total <= 0.0 {
            return 0.0;
        }
        2.0 * internal / self.total * (self.vol_alpha / vol).log2()
    }

    /// Total entropy reduction of a labeling.
    fn score(&self, label: &[usize]) -> f64 {
        let mut vol: BTreeMap<usize, f64> = BTreeMap::new();
        let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
        for (u, &l) in label.iter().enumerate() {
            *vol.entry(l).or_insert(0.0) += self.vol[u];
            for &(x, w) in &self.adj[u] {
                if x > u && label[x] == l {
                    *internal.entry(l).or_insert(0.0) += w;
                }
            }
        }
        vol.iter()
            .map(|(l, &v)| self.reduction(v, internal.get(l).copied().unwrap_or(0.0)))
            .sum()
    }

    /// Apply the best strictly improving local move until none is left:
    /// moving one unit or an adjacent pair of units to another (or a new)
    /// group, swapping two units, merging two groups, or dissolving a group
    /// into its neighbors.
    fn local_search(&self, mut label: Vec<usize>) -> Vec<usize> {
        for _ in 0..50 * self.vol.len() + 100 {
            let state = GroupState::new(self, &label);
            match state.best_move(self) {
                Some((gain, next)) if gain > MIN_GAIN => label = next,
                _ => break,
            }
        }
        label
    }

    /// Local search, then escape local optima by forcing each single-unit
    /// move and searching again; the first strictly better result is kept.
    fn refine(&self, groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        let m = self.vol.len();
        let mut label = vec![0; m];
        for (g, members) in groups.iter().enumerate() {
            for &u in members {
                label[u] = g;
            }
        }
        label = self.local_search(label);
        let mut score = self.score(&label);
        for _ in 0..2 * m + 2 {
            let state = GroupState::new(self, &label);
            let fresh = state.vol.len();
            let mut better = None;
            'search: for u in 0..m {
                let targets: Vec<usize> = state.to_group[u]
                    .keys()
                    .copied()
                    .chain([fresh])
                    .filter(|&g| g != state.label[u])
                    .collect();
                for g in targets {
                    let mut trial = state.label.clone();
                    trial[u] = g;
                    let trial = self.local_search(trial);
                    let s = self.score(&trial);
                    if s > score + MIN_GAIN {
                        better = Some((s, trial));
                        break 'search;
                    }
                }
            }
            match better {
                Some((s, trial)) => {
                    score = s;
                    label = trial;
                }
                None => break,
            }
        }
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (u, &l) in label.iter().enumerate() {
            out.entry(l).or_default().push(u);
        }
        let mut groups: Vec<Vec<usize>> = out.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

const MIN_GAIN: f64 = 1e-12;

/// Dense group labels with per-group volume, internal weight and the weight
/// from every unit to every adjacent group.
struct GroupState {
    label: Vec<usize>,
    vol: Vec<f64>,
    internal: Vec<f64>,
    size: Vec<usize>,
    to_group: Vec<BTreeMap<usize, f64>>,
}

impl GroupState {
    fn new(units: &UnitGraph, label: &[usize]) -> GroupState {
        let mut dense = BTreeMap::new();
        let label: Vec<usize> = label
            .iter()
            .map(|&l| {
                let next = dense.len();
                *dense.entry(l).or_insert(next)
            })
            .collect();
        let k = dense.len();
        let mut vol = vec![0.0; k];
        let mut internal = vec![0.0; k];
        let mut size = vec![0; k];
        let mut to_group = vec![BTreeMap::new(); label.len()];
        for (u, &l) in label.iter().enumerate() {
            vol[l] += units.vol[u];
            size[l] += 1;
            for &(x, w) in &units.adj[u] {
                *to_group[u].entry(label[x]).or_insert(0.0) += w;
                if x > u && label[x] == l {
                    internal[l] += w;
                }
            }
        }
        GroupState {
            label,
            vol,
            internal,
            size,
            to_group,
        }
    }

    fn w(&self, u: usize, g: usize) -> f64 {
        self.to_group[u].get(&g).copied().unwrap_or(0.0)
    }

    fn red(&self, units: &UnitGraph, g: usize) -> f64 {
        units.reduction(self.vol[g], self.internal[g])
    }

    /// Largest-gain move and the labeling it produces; ties keep the first
    /// candidate in enumeration order.
    fn best_move(&self, units: &UnitGraph) -> Option<(f64, Vec<usize>)> {
        let m = self.label.len();
        let fresh = self.vol.len();
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut offer = |gain: f64, moves: Vec<(usize, usize)>| {
            if best.as_ref().is_none_or(|b| gain > b.0) {
                best = Some((gain, moves));
            }
        };
        let pair_weight = |u: usize, v: usize| {
            units.adj[u].iter().find(|e| e.0 == v).map_or(0.0, |e| e.1)
        };
        for u in 0..m {
            let a = self.label[u];
            let leave = units.reduction(self.vol[a] - units.vol[u], self.internal[a] - self.w(u, a))
                - self.red(units, a);
            for (&b, &w_b) in &self.to_group[u] {
                if b != a {
                    let join = units.reduction(self.vol[b] + units.vol[u], self.internal[b] + w_b)
                        - self.red(units, b);
                    offer(leave + join, vec![(u, b)]);
                }
            }
            if self.size[a] > 1 {
                offer(leave, vec![(u, fresh)]);
            }
            for &(v, w_uv) in &units.adj[u] {
                if v <= u {
                    continue;
                }
                let b = self.label[v];
                if b == a {
                    // move the adjacent pair together
                    let pv = units.vol[u] + units.vol[v];
                    let leave = units.reduction(
                        self.vol[a] - pv,
                        self.internal[a] - self.w(u, a) - self.w(v, a) + w_uv,
                    ) - self.red(units, a);
                    let mut targets: Vec<usize> = self.to_group[u]
                        .keys()
                        .chain(self.to_group[v].keys())
                        .copied()
                        .filter(|&g| g != a)
                        .collect();
                    targets.sort_unstable();
                    targets.dedup();
                    for g in targets {
                        let join = units.reduction(
                            self.vol[g] + pv,
                            self.internal[g] + self.w(u, g) + self.w(v, g) + w_uv,
                        ) - self.red(units, g);
                        offer(leave + join, vec![(u, g), (v, g)]);
                    }
                    if self.size[a] > 2 {
                        offer(leave + units.reduction(pv, w_uv), vec![(u, fresh), (v, fresh)]);
                    }
                }
            }
            // swaps with units of groups adjacent to u
            for (&b, _) in &self.to_group[u] {
                if b == a {
                    continue;
                }
                for v in 0..m {
                    if self.label[v] != b {
                        continue;
                    }
                    let w_uv = pair_weight(u, v);
                    let (du, dv) = (units.vol[u], units.vol[v]);
                    let new_a = units.reduction(
                        self.vol[a] - du + dv,
                        self.internal[a] - self.w(u, a) + self.w(v, a) - w_uv,
                    );
                    let new_b = units.reduction(
                        self.vol[b] - dv + du,
                        self.internal[b] - self.w(v, b) + self.w(u, b) - w_uv,
                    );
                    let gain = new_a + new_b - self.red(units, a) - self.red(units, b);
                    offer(gain, vec![(u, b), (v, a)]);
                }
            }
        }
        // merge two adjacent groups
        let mut between: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for u in 0..m {
            for (&g, &w) in &self.to_group[u] {
                let a = self.label[u];
                if a < g {
                    *between.entry((a, g)).or_insert(0.0) += w;
                }
            }
        }
        for (&(a, b), &w) in &between {
            let gain = units.reduction(self.vol[a] + self.vol[b], self.internal[a] + self.internal[b] + w)
                - self.red(units, a)
                - self.red(units, b);
            let moves = (0..m).filter(|&u| self.label[u] == b).map(|u| (u, a)).collect();
            offer(gain, moves);
        }
        // dissolve a group: members go to their strongest outside group
        for g in 0..fresh {
            if self.size[g] < 2 {
                continue;
            }
            let mut trial = self.label.clone();
            let mut next_fresh = fresh;
            for u in (0..m).filter(|&u| self.label[u] == g) {
                let target = self.to_group[u]
                    .iter()
                    .filter(|(&h, _)| h != g)
                    .fold(None, |acc: Option<(usize, f64)>, (&h, &w)| match acc {
                        Some(a) if a.1 >= w => Some(a),
                        _ => Some((h, w)),
                    });
                trial[u] = match target {
                    Some((h, _)) => h,
                    None => {
                        next_fresh += 1;
                        next_fresh - 1
                    }
                };
            }
            let gain = units.score(&trial) - units.score(&self.label);
            let moves = (0..m).filter(|&u| trial[u] != self.label[u]).map(|u| (u, trial[u])).collect();
            offer(gain, moves);
        }
        best.map(|(gain, moves)| {
            let mut label = self.label.clone();
            for (u, g) in moves {
                label[u] = g;
            }
            (gain, label)
        })
    }
}

struct Parents {
    parents: Vec<Option<usize>>,
    vertex: Vec<Option<usize>>,
}

impl Parents {
    fn of(tree: &EncodingTree) -> Self {
        Parents {
            parents: (0..tree.n_nodes()).map(|i| tree.parent(i)).collect(),
            vertex: (0..tree.n_nodes()).map(|i| tree.node(i).vertex).collect(),
        }
    }

    fn push(&mut self, parent: usize) -> usize {
        self.parents.push(Some(parent));
        self.vertex.push(None);
        self.parents.len() - 1
    }

    fn finish(self, n_vertices: usize) -> Result<EncodingTree> {
        // drop nodes detached from the root
        let n = self.parents.len();
        let mut attached = vec![None; n];
        fn resolve(i: usize, p: &[Option<usize>], memo: &mut [Option<bool>]) -> bool {
            if let Some(a) = memo[i] {
                return a;
            }
            let a = match p[i] {
                None => true,
                Some(usize::MAX) => false,
                Some(q) => resolve(q, p, memo),
            };
            memo[i] = Some(a);
            a
        }
        for i in 0..n {
            resolve(i, &self.parents, &mut attached);
        }
        let keep: Vec<usize> = (0..n).filter(|&i| attached[i] == Some(true)).collect();
        let mut new_id = vec![usize::MAX; n];
        for (k, &i) in keep.iter().enumerate() {
            new_id[i] = k;
        }
        let parents: Vec<Option<usize>> =
            keep.iter().map(|&i| self.parents[i].map(|p| new_id[p])).collect();
        let vertex: Vec<Option<usize>> = keep.iter().map(|&i| self.vertex[i]).collect();
        Ok(EncodingTree::from_parents(n_vertices, &parents, &vertex)?.compacted())
    }
}

/// Replace `alpha`'s children with one new node per group of units.
fn insert_groups(p: &mut Parents, alpha: usize, units: &[usize], groups: &[Vec<usize>]) {
    for g in groups {
        let node = p.push(alpha);
        for &u in g {
            p.parents[units[u]] = Some(node);
        }
    }
}

fn optimize_node(
    graph: &StateGraph,
    tree: &EncodingTree,
    stats: &TreeStats,
    alpha: usize,
) -> (Vec<usize>, Vec<Vec<usize>>) {
    let units = tree.children(alpha).to_vec();
    let unit_graph = UnitGraph::build(graph, tree, stats, alpha, &units);
    let groups = unit_graph.refine(Dendrogram::build(&unit_graph).best_groups());
    (units, groups)
}

/// Insert a community level under every node at height `h`.
fn refine_layer(graph: &StateGraph, tree: &EncodingTree, stats: &TreeStats, h: usize) -> Result<EncodingTree> {
    let heights = tree.node_heights();
    let mut p = Parents::of(tree);
    for alpha in 0..tree.n_nodes() {
        if heights[alpha] == h && !tree.is_leaf(alpha) {
            let (units, groups) = optimize_node(graph, tree, stats, alpha);
            insert_groups(&mut p, alpha, &units, &groups);
        }
    }
    p.finish(tree.n_vertices())
}

fn check_alpha(tree: &EncodingTree, alpha: usize) -> Result<()> {
    if alpha >= tree.n_nodes() {
        return Err(SihdError::Precondition(format!("node {alpha} does not exist")));
    }
    if tree.is_leaf(alpha) {
        return Err(SihdError::Precondition(format!("node {alpha} is a leaf")));
    }
    Ok(())
}

/// Replace the leaf children of `alpha` with a binary merge tree built by
/// greedily joining the adjacent pair whose union lowers the entropy most.
/// Children with no edge to the rest stay direct children of `alpha`.
pub fn stretch(graph: &StateGraph, tree: &EncodingTree, alpha: usize) -> Result<EncodingTree> {
    check_alpha(tree, alpha)?;
    if !tree.children(alpha).iter().all(|&c| tree.is_leaf(c)) {
        return Err(SihdError::Precondition(format!(
            "children of node {alpha} are not all leaves"
        )));
    }
    let stats = tree.stats(graph)?;
    let units = tree.children(alpha).to_vec();
    let d = Dendrogram::build(&UnitGraph::build(graph, tree, &stats, alpha, &units));
    let mut p = Parents::of(tree);
    let mut node_of = vec![usize::MAX; d.clusters.len()];
    node_of[..units.len()].copy_from_slice(&units);
    for c in (d.n_units..d.clusters.len()).rev() {
        // parents are created before their children so ids follow the
        // top-down order; the parent link is patched below
        node_of[c] = p.push(alpha);
    }
    for c in d.n_units..d.clusters.len() {
        let (a, b) = d.clusters[c].children.expect("merged cluster");
        p.parents[node_of[a]] = Some(node_of[c]);
        p.parents[node_of[b]] = Some(node_of[c]);
    }
    p.finish(tree.n_vertices())
}

/// Flatten the subtree under `alpha` to `alpha` → communities → leaves, where
/// the communities are the cut of the existing subtree with the largest
/// entropy reduction.
pub fn compress(graph: &StateGraph, tree: &EncodingTree, alpha: usize) -> Result<EncodingTree> {
    check_alpha(tree, alpha)?;
    if tree.children(alpha).iter().all(|&c| tree.is_leaf(c)) {
        return Err(SihdError::Precondition(format!(
            "node {alpha} has no internal descendants to compress"
        )));
    }
    let stats = tree.stats(graph)?;
    let total = stats.total_volume;
    let vol_alpha = stats.volume[alpha];
    // post-order over alpha's subtree
    let mut order = Vec::new();
    let mut stack = vec![alpha];
    while let Some(x) = stack.pop() {
        order.push(x);
        stack.extend(tree.children(x).iter().copied());
    }
    order.reverse();
    let n = tree.n_nodes();
    let mut leaf_cut = vec![0.0; n];
    let mut best = vec![0.0; n];
    let mut keep = vec![false; n];
    for &x in &order {
        if tree.is_leaf(x) {
            leaf_cut[x] = stats.cut[x];
            keep[x] = true;
            continue;
        }
        leaf_cut[x] = tree.children(x).iter().map(|&c| leaf_cut[c]).sum();
        if x == alpha {
            continue;
        }
        let internal = (leaf_cut[x] - stats.cut[x]) / 2.0;
        let vol = stats.volume[x];
        let own = if internal > 0.0 && vol > 0.0 && vol < vol_alpha && total > 0.0 {
            2.0 * internal / total * (vol_alpha / vol).log2()
        } else {
            0.0
        };
        let split: f64 = tree.children(x).iter().map(|&c| best[c]).sum();
        keep[x] = own >= split;
        best[x] = own.max(split);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<usize> = tree.children(alpha).iter().rev().copied().collect();
    while let Some(x) = stack.pop() {
        if keep[x] {
            groups.push(tree.vertex_set(x).into_iter().map(|v| tree.leaf_of(v)).collect());
        } else {
            stack.extend(tree.children(x).iter().rev().copied());
        }
    }
    let units: Vec<usize> = tree.vertex_set(alpha).into_iter().map(|v| tree.leaf_of(v)).collect();
    let position = |leaf: usize| units.iter().position(|&u| u == leaf).expect("leaf under alpha");
    let groups: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().map(|&leaf| position(leaf)).collect())
        .collect();
    let groups: Vec<Vec<usize>> = UnitGraph::build(graph, tree, &stats, alpha, &units)
        .refine(groups)
        .into_iter()
        .map(|g| g.into_iter().map(|u| units[u]).collect())
        .collect();
    let mut p = Parents::of(tree);
    // detach the old internal nodes below alpha
    for &x in &order {
        if x != alpha && !tree.is_leaf(x) {
            p.parents[x] = Some(usize::MAX);
        }
    }
    for g in &groups {
        let node = p.push(alpha);
        for &leaf in g {
            p.parents[leaf] = Some(node);
        }
    }
    p.finish(tree.n_vertices())
}

/// Optimize an encoding tree of height at most `max_height`.
pub fn hcse_optimize(graph: &StateGraph, max_height: usize) -> Result<EncodingTree> {
    hcse_optimize_traced(graph, max_height).map(|(t, _)| t)
}

/// Starting from the flat tree, repeatedly insert a community level under
/// every node of the height whose refinement lowers the entropy most (ties to
/// the lowest height), until no refinement helps or the height limit is hit.
pub fn hcse_optimize_traced(
    graph: &StateGraph,
    max_height: usize,
) -> Result<(EncodingTree, HcseTrace)> {
    if max_height < 2 {
        return Err(SihdError::InvalidArgument(format!(
            "tree height limit must be at least 2, got {max_height}"
        )));
    }
    if graph.n_vertices() == 0 {
        return Err(SihdError::EmptyGraph);
    }
    let mut tree = EncodingTree::flat(graph.n_vertices());
    let mut current = tree_entropy(graph, &tree)?;
    let mut trace = HcseTrace {
        entropies: vec![current],
        refined: Vec::new(),
    };
    while tree.height() < max_height {
        let stats = tree.stats(graph)?;
        let mut best: Option<(f64, usize, EncodingTree, f64)> = None;
        for h in 1..=tree.height() {
            let candidate = refine_layer(graph, &tree, &stats, h)?;
            let entropy = entropy_from_stats(&candidate, &candidate.stats(graph)?);
            let reduction = current - entropy;
            if best.as_ref().is_none_or(|b| reduction > b.0) {
                best = Some((reduction, h, candidate, entropy));
            }
        }
        match best {
            Some((reduction, h, candidate, entropy)) if reduction > 1e-12 => {
                log::debug!("refined height {h}: entropy {current} -> {entropy}");
                tree = candidate;
                current = entropy;
                trace.entropies.push(entropy);
                trace.refined.push(h);
            }
            _ => break,
        }
    }
    Ok((tree, trace))
}
