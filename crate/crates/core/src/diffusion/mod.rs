//! Per-layer conditional diffusion over segment sequences.
//!
//! Layer `h < K` models the child sequence of a height-`h` segment and is
//! conditioned on the normalized structural information gain of the
//! segment's community; layer `K` models the whole-trajectory sequence of
//! height-`(K-1)` subgoals and is conditioned on normalized cumulative
//! reward. Every sequence starts with a context slot holding the state the
//! segment is entered from, so sampling can pin the current state there.
//! Layer 1 slots carry `[state, action]`, higher layers carry states only.

pub mod checkpoint;
pub mod kde;
pub mod network;
pub mod sampling;
pub mod schedule;
pub mod train;

use rand::Rng;

use crate::encoding_tree::{layer_partition, node_gain_from_stats, EncodingTree, TreeStats};
use crate::error::{Result, SihdError};

pub use checkpoint::{load_stack, read_stack, save_stack, write_stack, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kde::{
    entropy_terms, estimate_transitions, kde_log_density, scott_bandwidth, surrogate_weights, vertex_coverage,
    EntropyTerms, TransitionModel,
};
pub use network::{cfg_predict, cfg_predict_mode, step_embedding, Denoiser, GuidanceMode, NetShape, TrainExample, COND_DIM, STEP_DIM};
pub use sampling::{posterior_mean, reverse_step, sample_batch, Inpaint, Request, SampleOptions};
pub use schedule::{forward_diffuse, make_schedule, ScheduleKind, VarianceSchedule};
pub use train::{
    build_layer_samples, init_layer, layer_rng, train_layer, train_stack, training_loss, LayerLog, LayerSamples,
    RefreshRecord, Regularizer, TrainConfig, TrainLog,
};

/// Per-feature min-max scaling to `[-1, 1]`; constant features map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, features: usize) -> Self {
        let mut lo = vec![f64::INFINITY; features];
        let mut hi = vec![f64::NEG_INFINITY; features];
        for row in rows {
            for (f, &v) in row.iter().enumerate() {
                lo[f] = lo[f].min(v);
                hi[f] = hi[f].max(v);
            }
        }
        for f in 0..features {
            if !lo[f].is_finite() {
                lo[f] = 0.0;
                hi[f] = 0.0;
            }
        }
        Normalizer { lo, hi }
    }

    pub fn features(&self) -> usize {
        self.lo.len()
    }

    pub fn normalize(&self, f: usize, v: f64) -> f64 {
        let span = self.hi[f] - self.lo[f];
        if span <= 0.0 {
            0.0
        } else {
            2.0 * (v - self.lo[f]) / span - 1.0
        }
    }

    pub fn denormalize(&self, f: usize, v: f64) -> f64 {
        let span = self.hi[f] - self.lo[f];
        if span <= 0.0 {
            self.lo[f]
        } else {
            (v + 1.0) * span / 2.0 + self.lo[f]
        }
    }

    /// Flatten and normalize `slots × features` rows.
    pub fn encode(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .flat_map(|r| r.iter().enumerate().map(|(f, &v)| self.normalize(f, v)))
            .collect()
    }

    pub fn decode(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.features())
            .map(|r| r.iter().enumerate().map(|(f, &v)| self.denormalize(f, v)).collect())
            .collect()
    }
}

/// One layer's denoiser, its EMA shadow and data scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub net: Denoiser,
    pub ema: Vec<f64>,
    pub normalizer: Normalizer,
    pub steps_trained: u64,
}

/// Raw (unnormalized) sampling request: condition (`None` for `∅`) plus
/// states pinned at given slots. Pinned states fill the first features of
/// their slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRequest {
    pub y: Option<f64>,
    pub pinned: Vec<(usize, Vec<f64>)>,
}

impl LayerModel {
    pub fn new(net: Denoiser, normalizer: Normalizer) -> Self {
        let ema = net.params.clone();
        LayerModel {
            net,
            ema,
            normalizer,
            steps_trained: 0,
        }
    }

    pub fn slots(&self) -> usize {
        self.net.shape.slots
    }

    pub fn features(&self) -> usize {
        self.net.shape.features
    }

    /// The denoiser evaluated with EMA weights.
    pub fn ema_net(&self) -> Denoiser {
        Denoiser {
            layer: self.net.layer,
            shape: self.net.shape,
            params: self.ema.clone(),
        }
    }

    fn inpaint(&self, pinned: &[(usize, Vec<f64>)]) -> Inpaint {
        let f = self.features();
        let fixed = pinned
            .iter()
            .flat_map(|(slot, state)| {
                state
                    .iter()
                    .enumerate()
                    .map(move |(i, &v)| (slot * f + i, self.normalizer.normalize(i, v)))
            })
            .collect();
        Inpaint { fixed }
    }

    /// Sample sequences with the given network (EMA unless stated otherwise),
    /// returned as denormalized `slots × features` rows. Pinned states are
    /// copied back verbatim so they survive the scaling round trip exactly.
    pub fn generate_with<R: Rng + ?Sized>(
        &self,
        net: &Denoiser,
        requests: &[RawRequest],
        schedule: &VarianceSchedule,
        opts: SampleOptions,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        for r in requests {
            for (slot, state) in &r.pinned {
                if *slot >= self.slots() || state.len() > self.features() {
                    return Err(SihdError::InvalidArgument(format!(
                        "pinned state of length {} at slot {slot} does not fit {}x{}",
                        state.len(),
                        self.slots(),
                        self.features()
                    )));
                }
            }
        }
        let reqs: Vec<Request> = requests
            .iter()
            .map(|r| Request {
                y: r.y,
                inpaint: self.inpaint(&r.pinned),
            })
            .collect();
        let flat = sample_batch(net, &reqs, schedule, opts, rng)?;
        Ok(flat
            .iter()
            .zip(requests)
            .map(|(x, r)| {
                let mut rows = self.normalizer.decode(x);
                for (slot, state) in &r.pinned {
                    rows[*slot][..state.len()].copy_from_slice(state);
                }
                rows
            })
            .collect())
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        requests: &[RawRequest],
        schedule: &VarianceSchedule,
        opts: SampleOptions,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        self.generate_with(&self.ema_net(), requests, schedule, opts, rng)
    }
}

/// Denoisers for layers `1..=K` with their shared schedule and guidance settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStack {
    pub schedule: VarianceSchedule,
    pub omega: f64,
    pub eta: f64,
    pub guidance: GuidanceMode,
    pub clip: bool,
    pub state_dim: usize,
    pub action_dim: usize,
    pub r_max: f64,
    /// `layers[h - 1]` is layer `h`.
    pub layers: Vec<LayerModel>,
    pub config_hash: [u8; 32],
}

impl DiffusionStack {
    /// Number of layers `K` (the tree height).
    pub fn height(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, h: usize) -> &LayerModel {
        &self.layers[h - 1]
    }

    pub fn is_trained(&self) -> bool {
        !self.layers.is_empty() && self.layers.iter().all(|l| l.steps_trained > 0)
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            omega: self.omega,
            mode: self.guidance,
            clip: self.clip,
        }
    }
}

/// Feature width of layer `h`'s slots.
pub fn layer_features(h: usize, state_dim: usize, action_dim: usize) -> usize {
    if h == 1 {
        state_dim + action_dim
    } else {
        state_dim
    }
}

/// Structural information gains of every tree node and, for each height
/// `1..K`, the largest gain among that height's communities.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub gains: Vec<f64>,
    /// `max_gain[h - 1]` for height `h`.
    pub max_gain: Vec<f64>,
    /// `members[h - 1]` lists the community nodes at height `h`.
    pub members: Vec<Vec<usize>>,
}

impl GainTable {
    pub fn new(tree: &EncodingTree, stats: &TreeStats) -> Result<Self> {
        let gains = (0..tree.n_nodes())
            .map(|id| {
                if tree.parent(id).is_none() {
                    Ok(0.0)
                } else {
                    node_gain_from_stats(tree, stats, id)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut max_gain = Vec::new();
        let mut members = Vec::new();
        for h in 1..tree.height() {
            let lp = layer_partition(tree, h)?;
            max_gain.push(lp.nodes.iter().map(|&n| gains[n]).fold(0.0, f64::max));
            members.push(lp.nodes);
        }
        Ok(GainTable {
            gains,
            max_gain,
            members,
        })
    }

    /// `g(α) / max_{β at height h} g(β)`, or 0 when every gain at `h` is 0.
    pub fn normalized(&self, h: usize, node: usize) -> Result<f64> {
        let members = self.members.get(h.wrapping_sub(1)).ok_or_else(|| {
            SihdError::UnresolvedCommunity(format!("no communities at height {h}"))
        })?;
        if members.binary_search(&node).is_err() {
            return Err(SihdError::UnresolvedCommunity(format!(
                "node {node} is not a height-{h} community"
            )));
        }
        let max = self.max_gain[h - 1];
        Ok(if max > 0.0 { self.gains[node] / max } else { 0.0 })
    }
}

/// What a sequence is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentContext {
    /// Top layer: the trajectory's cumulative reward.
    Reward(f64),
    /// Lower layers: the tree node of the segment's community.
    Community(usize),
}

/// Condition scalar for layer `h` of a `K`-layer stack.
pub fn condition_value(h: usize, k: usize, ctx: SegmentContext, r_max: f64, gains: &GainTable) -> Result<f64> {
    match ctx {
        SegmentContext::Reward(r) if h == k => Ok(reward_condition(r, r_max)),
        SegmentContext::Community(node) if h < k => gains.normalized(h, node),
        other => Err(SihdError::UnresolvedCommunity(format!(
            "context {other:?} does not apply to layer {h} of {k}"
        ))),
    }
}

/// Cumulative reward scaled by `|r_max|` and clamped to `[-1, 1]`.
pub fn reward_condition(reward: f64, r_max: f64) -> f64 {
    if r_max.abs() > 0.0 {
        (reward / r_max.abs()).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}
