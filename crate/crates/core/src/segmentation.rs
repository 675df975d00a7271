//! Hierarchical trajectory segmentation over encoding-tree communities.
//!
//! At each height a trajectory is cut wherever two consecutive states fall in
//! different communities. Coarser cuts are inherited by finer layers so the
//! segments nest: every layer-`h` segment is a union of consecutive
//! layer-`(h-1)` segments. The final state of a segment is its subgoal.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::encoding_tree::{layer_partition, EncodingTree, LayerPartition};
use crate::error::{Result, SihdError};

/// Contiguous timesteps `start..end` of one trajectory at one height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// Tree node shared by every state of the segment.
    pub community: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Timestep of the subgoal (the last state).
    pub fn subgoal_step(&self) -> usize {
        self.end - 1
    }

    pub fn states<'a>(&self, traj: &'a Trajectory) -> &'a [Vec<f64>] {
        &traj.states[self.start..self.end]
    }

    pub fn actions<'a>(&self, traj: &'a Trajectory) -> &'a [Vec<f64>] {
        &traj.actions[self.start..self.end]
    }

    pub fn subgoal<'a>(&self, traj: &'a Trajectory) -> &'a [f64] {
        &traj.states[self.end - 1]
    }
}

fn check_ids(vertex_ids: &[usize], partition: &LayerPartition) -> Result<()> {
    if vertex_ids.is_empty() {
        return Err(SihdError::InvalidTrajectory("empty trajectory".into()));
    }
    match vertex_ids.iter().position(|&v| v >= partition.community.len()) {
        Some(t) => Err(SihdError::UnmappedState(t)),
        None => Ok(()),
    }
}

/// Split a trajectory, given the vertex of each timestep, wherever the
/// community changes.
pub fn segment_layer(vertex_ids: &[usize], partition: &LayerPartition) -> Result<Vec<Segment>> {
    check_ids(vertex_ids, partition)?;
    Ok(split(vertex_ids, partition, &BTreeSet::new()))
}

fn split(vertex_ids: &[usize], partition: &LayerPartition, forced: &BTreeSet<usize>) -> Vec<Segment> {
    let community = |t: usize| partition.community[vertex_ids[t]];
    let mut segments = Vec::new();
    let mut start = 0;
    for t in 1..=vertex_ids.len() {
        let cut = t == vertex_ids.len() || community(t) != community(t - 1) || forced.contains(&t);
        if cut {
            segments.push(Segment {
                layer: partition.height,
                index: segments.len(),
                start,
                end: t,
                community: community(start),
            });
            start = t;
        }
    }
    segments
}

/// Nested segments of one trajectory for heights `1..K`, `K` the tree height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentHierarchy {
    pub tree_height: usize,
    /// `layers[h - 1]` holds the height-`h` segments.
    pub layers: Vec<Vec<Segment>>,
}

impl SegmentHierarchy {
    pub fn layer(&self, h: usize) -> &[Segment] {
        &self.layers[h - 1]
    }

    /// Segment start indices at height `h` (always begins with 0).
    pub fn boundaries(&self, h: usize) -> Vec<usize> {
        self.layer(h).iter().map(|s| s.start).collect()
    }

    /// Subgoal timesteps at height `h`.
    pub fn subgoals(&self, h: usize) -> Vec<usize> {
        self.layer(h).iter().map(Segment::subgoal_step).collect()
    }

    /// Timesteps making up the child sequence of segment `i` at height `h`:
    /// the height-`(h-1)` subgoals inside it, or every timestep of the
    /// segment when `h == 1`.
    pub fn child_sequence(&self, h: usize, i: usize) -> Vec<usize> {
        let seg = self.layer(h)[i];
        if h == 1 {
            return (seg.start..seg.end).collect();
        }
        self.subgoals(h - 1)
            .into_iter()
            .filter(|&t| seg.start <= t && t < seg.end)
            .collect()
    }

    /// The sequence under the root: all subgoals of the coarsest layer.
    pub fn top_sequence(&self) -> Vec<usize> {
        self.subgoals(self.tree_height - 1)
    }
}

/// Segment every height of `tree` below the root.
pub fn build_hierarchy(vertex_ids: &[usize], tree: &EncodingTree) -> Result<SegmentHierarchy> {
    let height = tree.height();
    if height < 2 {
        return Err(SihdError::EmptyHierarchy(format!("tree height {height} has no layer below the root")));
    }
    let mut layers = vec![Vec::new(); height - 1];
    let mut forced = BTreeSet::new();
    for h in (1..height).rev() {
        let partition = layer_partition(tree, h)?;
        check_ids(vertex_ids, &partition)?;
        let segments = split(vertex_ids, &partition, &forced);
        forced.extend(segments.iter().map(|s| s.start).filter(|&s| s > 0));
        layers[h - 1] = segments;
    }
    Ok(SegmentHierarchy {
        tree_height: height,
        layers,
    })
}

/// A fixed-length sequence with a mask marking the original positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded<T> {
    pub values: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Clone> Padded<T> {
    pub fn unpad(&self) -> Vec<T> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.clone())
            .collect()
    }
}

/// Repeat the last element until the sequence has `target_len` entries.
pub fn pad_sequence<T: Clone>(seq: &[T], target_len: usize) -> Result<Padded<T>> {
    let last = seq
        .last()
        .ok_or_else(|| SihdError::InvalidArgument("cannot pad an empty sequence".into()))?;
    if seq.len() > target_len {
        return Err(SihdError::Overflow {
            len: seq.len(),
            target: target_len,
        });
    }
    let mut values = seq.to_vec();
    values.resize(target_len, last.clone());
    let mut mask = vec![true; seq.len()];
    mask.resize(target_len, false);
    Ok(Padded { values, mask })
}

/// Consecutive chunks of at most `target_len` elements.
pub fn chunk_sequence<T>(seq: &[T], target_len: usize) -> Vec<&[T]> {
    if target_len == 0 {
        return Vec::new();
    }
    seq.chunks(target_len).collect()
}

/// Per-trajectory summary written by the `segment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentsFile {
    pub tree_height: usize,
    pub trajectories: Vec<TrajectorySegments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegments {
    pub layers: Vec<LayerSegments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSegments {
    pub height: usize,
    pub boundaries: Vec<usize>,
    pub subgoal_steps: Vec<usize>,
}

impl SegmentsFile {
    pub fn from_hierarchies(tree_height: usize, hierarchies: &[SegmentHierarchy]) -> Self {
        let trajectories = hierarchies
            .iter()
            .map(|hier| TrajectorySegments {
                layers: (1..hier.tree_height)
                    .map(|h| LayerSegments {
                        height: h,
                        boundaries: hier.boundaries(h),
                        subgoal_steps: hier.subgoals(h),
                    })
                    .collect(),
            })
            .collect();
        SegmentsFile {
            tree_height,
            trajectories,
        }
    }
}
