//! Training data assembly and the per-layer optimization loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kde::{entropy_terms, estimate_transitions, surrogate_weights, EntropyTerms};
use super::network::{Denoiser, GuidanceMode, NetShape, TrainExample};
use super::schedule::{forward_diffuse, make_schedule, ScheduleKind, VarianceSchedule};
use super::{layer_features, reward_condition, DiffusionStack, GainTable, LayerModel, Normalizer, SampleOptions};
use crate::dataset::{cumulative_reward, Dataset};
use crate::encoding_tree::EncodingTree;
use crate::error::{Result, SihdError};
use crate::segmentation::{chunk_sequence, pad_sequence, SegmentHierarchy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    /// Slots per layer (context slot included); one entry per layer, or a
    /// single entry shared by all.
    pub pad_lens: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub p_uncond: f64,
    pub omega: f64,
    pub eta: f64,
    pub refresh_every: usize,
    pub kde_samples: usize,
    pub guidance: GuidanceMode,
    pub clip: bool,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    pub grad_clip: f64,
    /// Apply the visitation-based loss weights when `eta > 0`.
    pub surrogate: bool,
    /// Probability that a training row keeps its pinned entries (context
    /// state, and the terminal state below the top layer) clean.
    pub pin_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 128,
            pad_lens: vec![16],
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            ema_decay: 0.995,
            p_uncond: 0.25,
            omega: 0.1,
            eta: 0.1,
            refresh_every: 50,
            kde_samples: 32,
            guidance: GuidanceMode::Embedding,
            clip: true,
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 20,
            grad_clip: 1.0,
            surrogate: true,
            pin_prob: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn pad_len(&self, h: usize) -> usize {
        match self.pad_lens.len() {
            0 => 16,
            1 => self.pad_lens[0],
            _ => self.pad_lens[(h - 1).min(self.pad_lens.len() - 1)],
        }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            omega: self.omega,
            mode: self.guidance,
            clip: self.clip,
        }
    }
}

/// Padded training sequences of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSamples {
    pub layer: usize,
    pub slots: usize,
    pub features: usize,
    /// Leading features of a slot that hold the state.
    pub state_dim: usize,
    /// Whether sampling pins the terminal slot (every layer but the top).
    pub pin_terminal: bool,
    /// `slots × features` rows per sample, padded by repeating the last row.
    pub rows: Vec<Vec<Vec<f64>>>,
    pub conds: Vec<f64>,
    /// Vertex of every unpadded slot.
    pub vertices: Vec<Vec<usize>>,
}

impl LayerSamples {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Sequences for layer `h` of a `k`-layer stack. Each sequence is the
/// context timestep followed by the segment's child timesteps (the top layer
/// uses the whole trajectory's coarsest subgoals); long sequences are split
/// into chunks whose context is the preceding element.
#[allow(clippy::too_many_arguments)]
pub fn build_layer_samples(
    dataset: &Dataset,
    vertex_ids: &[Vec<usize>],
    hierarchies: &[SegmentHierarchy],
    gains: &GainTable,
    h: usize,
    k: usize,
    pad_len: usize,
) -> Result<LayerSamples> {
    if pad_len < 2 {
        return Err(SihdError::InvalidArgument(format!("pad length {pad_len} leaves no room after the context slot")));
    }
    if h == 0 || h > k {
        return Err(SihdError::HeightOutOfRange { height: h, max: k });
    }
    let features = layer_features(h, dataset.state_dim, dataset.action_dim);
    let mut out = LayerSamples {
        layer: h,
        slots: pad_len,
        features,
        state_dim: dataset.state_dim,
        pin_terminal: h < k,
        rows: Vec::new(),
        conds: Vec::new(),
        vertices: Vec::new(),
    };
    for (ti, (traj, hier)) in dataset.trajectories.iter().zip(hierarchies).enumerate() {
        let row = |t: usize| -> Vec<f64> {
            let mut r = traj.states[t].clone();
            if h == 1 {
                r.extend_from_slice(&traj.actions[t]);
            }
            r
        };
        let mut units: Vec<(usize, Vec<usize>, f64)> = Vec::new();
        if h < k {
            for (i, seg) in hier.layer(h).iter().enumerate() {
                let mut children = hier.child_sequence(h, i);
                let ctx = seg.start.saturating_sub(1);
                if seg.start == 0 && children.first() == Some(&0) {
                    children.remove(0);
                }
                units.push((ctx, children, gains.normalized(h, seg.community)?));
            }
        } else {
            let mut children = hier.top_sequence();
            if children.first() == Some(&0) {
                children.remove(0);
            }
            units.push((0, children, reward_condition(cumulative_reward(traj), dataset.r_max)));
        }
        for (ctx, children, cond) in units {
            let mut ctx = ctx;
            let chunks = if children.is_empty() {
                vec![&children[..]]
            } else {
                chunk_sequence(&children, pad_len - 1)
            };
            for chunk in chunks {
                let steps: Vec<usize> = std::iter::once(ctx).chain(chunk.iter().copied()).collect();
                let rows: Vec<Vec<f64>> = steps.iter().map(|&t| row(t)).collect();
                out.rows.push(pad_sequence(&rows, pad_len)?.values);
                out.conds.push(cond);
                out.vertices.push(steps.iter().map(|&t| vertex_ids[ti][t]).collect());
                ctx = *steps.last().expect("non-empty");
            }
        }
    }
    Ok(out)
}

/// Regularized objective on one batch: weighted noise MSE minus
/// `η·(H(S) - Σ_h η_h H(𝒰_h))` on layer 1. Returns `(loss, mse, ∇mse)`;
/// the entropy term is a constant with respect to the parameters.
pub fn training_loss(
    denoiser: &Denoiser,
    batch: &[TrainExample],
    eta: f64,
    terms: Option<&EntropyTerms>,
) -> Result<(f64, f64, Vec<f64>)> {
    if terms.is_some() && denoiser.layer != 1 {
        return Err(SihdError::InvalidArgument(format!(
            "entropy terms supplied to layer {}",
            denoiser.layer
        )));
    }
    let (mse, grad) = denoiser.mse_and_grad(batch)?;
    let reg = match terms {
        Some(t) if denoiser.layer == 1 => eta * t.lower_bound(),
        _ => 0.0,
    };
    Ok((mse - reg, mse, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshRecord {
    pub step: usize,
    pub h_s: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub eta: Vec<f64>,
    pub layer_entropies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLog {
    pub layer: usize,
    pub samples: usize,
    pub mse: Vec<f64>,
    pub loss: Vec<f64>,
    pub refreshes: Vec<RefreshRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub layers: Vec<LayerLog>,
}

/// What layer 1 needs to refresh its transition model.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer<'a> {
    pub tree: &'a EncodingTree,
    pub vertices: &'a [Vec<f64>],
    pub state_dim: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Flat indices the planner pins: the context state and, below the top
/// layer, the terminal state.
pub fn pinned_entries(samples: &LayerSamples) -> Vec<usize> {
    let mut out: Vec<usize> = (0..samples.state_dim).collect();
    if samples.pin_terminal {
        let last = (samples.slots - 1) * samples.features;
        out.extend(last..last + samples.state_dim);
    }
    out
}

/// Draw one training batch: random sample, step and noise per row; the
/// condition is replaced by `∅` with probability `p_uncond`, otherwise
/// blended with weight `ω` exactly as at sampling time.
fn draw_batch<R: Rng + ?Sized>(
    encoded: &[Vec<f64>],
    samples: &LayerSamples,
    weights: &[f64],
    schedule: &VarianceSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<TrainExample>> {
    (0..cfg.batch_size)
        .map(|_| {
            let i = rng.random_range(0..encoded.len());
            let k = rng.random_range(1..=schedule.steps());
            let noise: Vec<f64> = (0..encoded[i].len()).map(|_| StandardNormal.sample(rng)).collect();
            let mut noised = forward_diffuse(&encoded[i], k, schedule, &noise)?;
            let blend = if rng.random::<f64>() < cfg.p_uncond { 1.0 } else { cfg.omega };
            let mut fixed = Vec::new();
            if rng.random::<f64>() < cfg.pin_prob {
                fixed = pinned_entries(samples);
                for &j in &fixed {
                    noised[j] = encoded[i][j];
                }
            }
            Ok(TrainExample {
                noised,
                noise,
                step: k,
                y: samples.conds[i],
                blend,
                weight: weights[i],
                fixed,
            })
        })
        .collect()
}

/// Optimize one layer in place with Adam and an EMA shadow.
pub fn train_layer<R: Rng + ?Sized>(
    model: &mut LayerModel,
    samples: &LayerSamples,
    schedule: &VarianceSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
    regularizer: Option<Regularizer<'_>>,
) -> Result<LayerLog> {
    if samples.is_empty() {
        return Err(SihdError::EmptyHierarchy(format!("layer {} has no training sequences", samples.layer)));
    }
    if samples.slots != model.slots() || samples.features != model.features() {
        return Err(SihdError::ShapeMismatch {
            expected: model.net.shape.seq_len(),
            got: samples.slots * samples.features,
        });
    }
    let encoded: Vec<Vec<f64>> = samples.rows.iter().map(|r| model.normalizer.encode(r)).collect();
    let mut weights = vec![1.0; encoded.len()];
    let regularize = model.net.layer == 1 && cfg.eta > 0.0 && cfg.refresh_every > 0;
    let mut terms: Option<EntropyTerms> = None;
    let mut adam = Adam::new(model.net.params.len());
    let mut log = LayerLog {
        layer: model.net.layer,
        samples: encoded.len(),
        mse: Vec::with_capacity(cfg.steps),
        loss: Vec::with_capacity(cfg.steps),
        refreshes: Vec::new(),
    };
    for step in 0..cfg.steps {
        if regularize && step > 0 && step % cfg.refresh_every == 0 {
            if let Some(reg) = regularizer {
                model.steps_trained = step as u64;
                let tm = estimate_transitions(
                    model,
                    reg.state_dim,
                    schedule,
                    cfg.sample_options(),
                    cfg.kde_samples,
                    rng,
                    reg.vertices,
                )?;
                let t = entropy_terms(&tm, reg.tree)?;
                log::debug!("layer 1 step {step}: H(S) = {:.4}, lower = {:.4}", t.h_s, t.lower_bound());
                log.refreshes.push(RefreshRecord {
                    step,
                    h_s: t.h_s,
                    lower: t.report.lower,
                    value: t.report.value,
                    upper: t.report.upper,
                    eta: t.eta.clone(),
                    layer_entropies: t.layer_entropies.clone(),
                });
                if cfg.surrogate {
                    weights = surrogate_weights(&tm.visitation, &samples.vertices, cfg.eta);
                }
                terms = Some(t);
            }
        }
        let batch = draw_batch(&encoded, samples, &weights, schedule, cfg, rng)?;
        let (loss, mse, mut grad) = training_loss(&model.net, &batch, cfg.eta, terms.as_ref())?;
        if cfg.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        adam.step(&mut model.net.params, &grad, cfg.learning_rate);
        let d = cfg.ema_decay;
        for (e, p) in model.ema.iter_mut().zip(&model.net.params) {
            *e = d * *e + (1.0 - d) * p;
        }
        log.mse.push(mse);
        log.loss.push(loss);
    }
    model.steps_trained = cfg.steps as u64;
    Ok(log)
}

/// Fresh, untrained layer model shaped for `samples`.
pub fn init_layer<R: Rng + ?Sized>(samples: &LayerSamples, hidden: usize, rng: &mut R) -> Result<LayerModel> {
    let shape = NetShape {
        slots: samples.slots,
        features: samples.features,
        hidden,
    };
    let net = Denoiser::new(samples.layer, shape, rng)?;
    let normalizer = Normalizer::fit(
        samples.rows.iter().flat_map(|r| r.iter().map(Vec::as_slice)),
        samples.features,
    );
    Ok(LayerModel::new(net, normalizer))
}

/// Per-layer generator: stream `h` of the seed.
pub fn layer_rng(seed: u64, h: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h as u64);
    rng
}

/// Train every layer `1..=K` of a stack, `K` the tree height.
#[allow(clippy::too_many_arguments)]
pub fn train_stack(
    dataset: &Dataset,
    vertex_ids: &[Vec<usize>],
    vertices: &[Vec<f64>],
    tree: &EncodingTree,
    gains: &GainTable,
    hierarchies: &[SegmentHierarchy],
    cfg: &TrainConfig,
    config_hash: [u8; 32],
) -> Result<(DiffusionStack, TrainLog)> {
    let k = tree.height();
    if k < 2 {
        return Err(SihdError::EmptyHierarchy(format!("tree height {k} has no layer below the root")));
    }
    if hierarchies.len() != dataset.len() || vertex_ids.len() != dataset.len() {
        return Err(SihdError::EmptyHierarchy(format!(
            "{} hierarchies and {} vertex maps for {} trajectories",
            hierarchies.len(),
            vertex_ids.len(),
            dataset.len()
        )));
    }
    if let Some(hier) = hierarchies.iter().find(|h| h.tree_height != k) {
        return Err(SihdError::EmptyHierarchy(format!(
            "hierarchy built for height {} but tree has height {k}",
            hier.tree_height
        )));
    }
    let schedule = make_schedule(cfg.schedule, cfg.diffusion_steps)?;
    let mut layers = Vec::with_capacity(k);
    let mut logs = Vec::with_capacity(k);
    for h in 1..=k {
        let samples = build_layer_samples(dataset, vertex_ids, hierarchies, gains, h, k, cfg.pad_len(h))?;
        let mut rng = layer_rng(cfg.seed, h);
        let mut model = init_layer(&samples, cfg.hidden, &mut rng)?;
        let reg = (h == 1).then_some(Regularizer {
            tree,
            vertices,
            state_dim: dataset.state_dim,
        });
        log::info!("training layer {h}/{k} on {} sequences", samples.len());
        let log = train_layer(&mut model, &samples, &schedule, cfg, &mut rng, reg)?;
        layers.push(model);
        logs.push(log);
    }
    Ok((
        DiffusionStack {
            schedule,
            omega: cfg.omega,
            eta: cfg.eta,
            guidance: cfg.guidance,
            clip: cfg.clip,
            state_dim: dataset.state_dim,
            action_dim: dataset.action_dim,
            r_max: dataset.r_max,
            layers,
            config_hash,
        },
        TrainLog { layers: logs },
    ))
}
