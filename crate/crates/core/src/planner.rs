//! Receding-horizon hierarchical planning.
//!
//! Buffers are named by the layer that fills them: buffer `h` (`2 <= h <= K`)
//! holds the sequence most recently generated by layer `h`, whose elements
//! are height-`(h-1)` subgoals. The head of buffer `h + 1` governs layer `h`:
//! it is pinned as the terminal slot of every layer-`h` rollout, and its
//! community supplies layer `h`'s condition. Layer 1 is re-run at every
//! outer step with the current (imagined) state pinned at slot 0; its slot-0
//! action is emitted and its slot-1 state becomes the next current state.
//!
//! A satisfied head subgoal is dropped. When a buffer runs empty it is
//! regenerated, refreshing its parent first if the parent's head is
//! satisfied too, so coarser buffers are never refreshed more often than
//! finer ones.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reward_condition, DiffusionStack, GainTable, RawRequest};
use crate::encoding_tree::{layer_partition, EncodingTree, LayerPartition};
use crate::error::{Result, SihdError};
use crate::state_graph::nearest_vertex;

/// Euclidean closed-ball subgoal test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgoalCriterion {
    pub tolerance: f64,
}

impl SubgoalCriterion {
    pub fn new(tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return Err(SihdError::InvalidArgument(format!("goal tolerance {tolerance} must be positive")));
        }
        Ok(SubgoalCriterion { tolerance })
    }
}

/// True iff `‖state - subgoal‖₂ <= ε_goal`.
pub fn is_satisfied(state: &[f64], subgoal: &[f64], criterion: &SubgoalCriterion) -> Result<bool> {
    if state.len() != subgoal.len() {
        return Err(SihdError::ShapeMismatch {
            expected: state.len(),
            got: subgoal.len(),
        });
    }
    let d2: f64 = state.iter().zip(subgoal).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(d2.sqrt() <= criterion.tolerance)
}

/// One buffer regeneration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub t: usize,
    pub layer: usize,
    /// `None` when the condition fell back to `∅`.
    pub condition: Option<f64>,
    pub community: Option<usize>,
    pub subgoals: Vec<Vec<f64>>,
}

/// Planner buffers and history.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    /// `buffers[h - 2]` is buffer `h`.
    pub buffers: Vec<VecDeque<Vec<f64>>>,
    /// Imagined states, starting with `s_0`.
    pub states: Vec<Vec<f64>>,
    /// One slot per state; the last is `None` until the next step fills it.
    pub actions: Vec<Option<Vec<f64>>>,
    pub horizon: usize,
    pub t: usize,
    pub refreshes: Vec<RefreshEvent>,
    /// Layer-1 condition used at each step (`None` for `∅`).
    pub conditions: Vec<Option<f64>>,
    /// Steps that fell back to repeating the previous action.
    pub fallbacks: usize,
}

impl PlanState {
    pub fn current(&self) -> &[f64] {
        self.states.last().expect("states start with s_0")
    }

    pub fn buffer(&self, h: usize) -> &VecDeque<Vec<f64>> {
        &self.buffers[h - 2]
    }
}

/// Result of a planning call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub actions: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub refreshes: Vec<RefreshEvent>,
    pub conditions: Vec<Option<f64>>,
    pub fallbacks: usize,
}

pub struct Planner<'a> {
    pub stack: &'a DiffusionStack,
    pub tree: &'a EncodingTree,
    pub vertices: &'a [Vec<f64>],
    pub gains: &'a GainTable,
    pub criterion: SubgoalCriterion,
    partitions: Vec<LayerPartition>,
}

fn finite(rows: &[Vec<f64>]) -> bool {
    rows.iter().all(|r| r.iter().all(|v| v.is_finite()))
}

impl<'a> Planner<'a> {
    pub fn new(
        stack: &'a DiffusionStack,
        tree: &'a EncodingTree,
        vertices: &'a [Vec<f64>],
        gains: &'a GainTable,
        criterion: SubgoalCriterion,
    ) -> Result<Self> {
        if !stack.is_trained() {
            return Err(SihdError::Untrained);
        }
        if stack.height() != tree.height() {
            return Err(SihdError::Precondition(format!(
                "stack has {} layers but the tree has height {}",
                stack.height(),
                tree.height()
            )));
        }
        if vertices.len() != tree.n_vertices() {
            return Err(SihdError::VertexMismatch {
                tree: tree.n_vertices(),
                graph: vertices.len(),
            });
        }
        let partitions = (1..tree.height())
            .map(|h| layer_partition(tree, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Planner {
            stack,
            tree,
            vertices,
            gains,
            criterion,
            partitions,
        })
    }

    pub fn start(&self, s0: &[f64], horizon: usize) -> Result<PlanState> {
        if s0.len() != self.stack.state_dim || s0.iter().any(|v| !v.is_finite()) {
            return Err(SihdError::InvalidArgument(format!(
                "initial state must be {} finite values",
                self.stack.state_dim
            )));
        }
        Ok(PlanState {
            buffers: vec![VecDeque::new(); self.stack.height() - 1],
            states: vec![s0.to_vec()],
            actions: vec![None],
            horizon,
            t: 0,
            refreshes: Vec::new(),
            conditions: Vec::new(),
            fallbacks: 0,
        })
    }

    /// Plan `horizon` actions from `s0` with the Euclidean criterion.
    pub fn plan<R: Rng + ?Sized>(&self, s0: &[f64], horizon: usize, rng: &mut R) -> Result<PlanOutput> {
        let c = self.criterion;
        self.plan_with(s0, horizon, rng, |_, _, s, g| is_satisfied(s, g, &c).unwrap_or(false))
    }

    /// Plan with a caller-supplied satisfaction test `(t, buffer layer,
    /// current state, subgoal) -> bool`.
    pub fn plan_with<R, F>(&self, s0: &[f64], horizon: usize, rng: &mut R, mut satisfied: F) -> Result<PlanOutput>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, usize, &[f64], &[f64]) -> bool,
    {
        let mut st = self.start(s0, horizon)?;
        for _ in 0..horizon {
            self.step(&mut st, rng, &mut satisfied)?;
        }
        debug_assert_eq!(st.states.len(), horizon + 1);
        Ok(PlanOutput {
            actions: st.actions.iter().flatten().cloned().collect(),
            states: st.states,
            refreshes: st.refreshes,
            conditions: st.conditions,
            fallbacks: st.fallbacks,
        })
    }

    /// Community at height `h` of the vertex nearest `state`.
    fn community(&self, h: usize, state: &[f64]) -> Option<usize> {
        let v = nearest_vertex(self.vertices, state)?;
        self.partitions.get(h - 1)?.community_of(v)
    }

    /// Condition for layer `h` governed by `subgoal`; `None` means `∅`.
    fn condition(&self, h: usize, subgoal: Option<&[f64]>) -> (Option<f64>, Option<usize>) {
        let k = self.stack.height();
        if h == k {
            return (Some(reward_condition(self.stack.r_max, self.stack.r_max)), None);
        }
        let Some(node) = subgoal.and_then(|g| self.community(h, g)) else {
            log::warn!("no height-{h} community for the governing subgoal; sampling unconditionally");
            return (None, None);
        };
        match self.gains.normalized(h, node) {
            Ok(y) => (Some(y), Some(node)),
            Err(e) => {
                log::warn!("{e}; sampling unconditionally");
                (None, Some(node))
            }
        }
    }

    /// One rollout of layer `h` from `current` toward `subgoal`, retried once
    /// on non-finite output. The terminal slot always equals the subgoal.
    fn rollout<R: Rng + ?Sized>(
        &self,
        h: usize,
        current: &[f64],
        subgoal: Option<&[f64]>,
        y: Option<f64>,
        rng: &mut R,
    ) -> Result<Option<Vec<Vec<f64>>>> {
        let model = self.stack.layer(h);
        let last = model.slots() - 1;
        let mut pinned = vec![(0, current.to_vec())];
        if let Some(g) = subgoal {
            pinned.push((last, g.to_vec()));
        }
        let req = [RawRequest { y, pinned }];
        for _ in 0..2 {
            let rows = model
                .generate(&req, &self.stack.schedule, self.stack.sample_options(), rng)?
                .pop()
                .expect("one request");
            if finite(&rows) {
                if let Some(g) = subgoal {
                    assert_eq!(&rows[last][..g.len()], g, "terminal slot must equal the governing subgoal");
                }
                return Ok(Some(rows));
            }
        }
        Ok(None)
    }

    /// Drop satisfied heads of buffer `h`, regenerating it via [`Self::f_su`]
    /// once if it runs empty. Keeps at least one element.
    fn ensure<R, F>(&self, h: usize, st: &mut PlanState, rng: &mut R, satisfied: &mut F) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, usize, &[f64], &[f64]) -> bool,
    {
        let t = st.t;
        let cur = st.current().to_vec();
        let buf = &mut st.buffers[h - 2];
        while buf.front().is_some_and(|g| satisfied(t, h, &cur, g)) {
            buf.pop_front();
        }
        if buf.is_empty() {
            self.f_su(h, st, rng, satisfied)?;
            let buf = &mut st.buffers[h - 2];
            while buf.len() > 1 && buf.front().is_some_and(|g| satisfied(t, h, &cur, g)) {
                buf.pop_front();
            }
        }
        Ok(())
    }

    /// Regenerate buffer `h` (`2 <= h <= K`). Below the top the parent buffer
    /// is brought up to date first, which only regenerates it when its own
    /// head is satisfied.
    pub fn f_su<R, F>(&self, h: usize, st: &mut PlanState, rng: &mut R, satisfied: &mut F) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, usize, &[f64], &[f64]) -> bool,
    {
        let k = self.stack.height();
        assert!((2..=k).contains(&h), "f_su called for layer {h} outside 2..={k}");
        let governing = if h < k {
            self.ensure(h + 1, st, rng, satisfied)?;
            st.buffer(h + 1).front().cloned()
        } else {
            None
        };
        let (y, community) = self.condition(h, governing.as_deref());
        let cur = st.current().to_vec();
        let subgoals: Vec<Vec<f64>> = match self.rollout(h, &cur, governing.as_deref(), y, rng)? {
            Some(rows) => rows[1..].iter().map(|r| r[..self.stack.state_dim].to_vec()).collect(),
            None => {
                log::warn!("layer {h} produced non-finite subgoals twice; keeping the governing subgoal");
                vec![governing.clone().unwrap_or(cur)]
            }
        };
        st.refreshes.push(RefreshEvent {
            t: st.t,
            layer: h,
            condition: y,
            community,
            subgoals: subgoals.clone(),
        });
        st.buffers[h - 2] = subgoals.into();
        Ok(())
    }

    /// One outer iteration: refresh subgoals as needed, run layer 1, append
    /// one state and one action.
    pub fn step<R, F>(&self, st: &mut PlanState, rng: &mut R, satisfied: &mut F) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, usize, &[f64], &[f64]) -> bool,
    {
        self.ensure(2, st, rng, satisfied)?;
        let governing = st.buffer(2).front().cloned();
        let (y, _) = self.condition(1, governing.as_deref());
        let cur = st.current().to_vec();
        let d = self.stack.state_dim;
        let (action, next) = match self.rollout(1, &cur, governing.as_deref(), y, rng)? {
            Some(rows) => (rows[0][d..].to_vec(), rows[1][..d].to_vec()),
            None => {
                st.fallbacks += 1;
                let prev = st
                    .actions
                    .iter()
                    .rev()
                    .flatten()
                    .next()
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; self.stack.action_dim]);
                (prev, cur)
            }
        };
        *st.actions.last_mut().expect("aligned") = Some(action);
        st.states.push(next);
        st.actions.push(None);
        st.conditions.push(y);
        st.t += 1;
        debug_assert_eq!(st.states.len(), st.actions.len());
        Ok(())
    }
}
