//! Kernel density estimate of generated state transitions and the complete
//! state graph it induces.
//!
//! Adjacent generated states are pooled as pairs `(s_t, s_{t+1})` in both
//! orders, so the joint density is symmetric. A product Gaussian kernel over
//! the `2d` pair coordinates (Scott bandwidth per coordinate) is evaluated at
//! every ordered pair of distinct vertices and normalized to total mass 1.
//! Visitation is the incoming mass `p(s) = Σ_i p(s_i, s)`, which is also the
//! vertex degree in the induced graph.

use rand::Rng;

use super::{DiffusionStack, LayerModel, RawRequest, SampleOptions, VarianceSchedule};
use crate::encoding_tree::{bound_check, BoundReport, EncodingTree};
use crate::error::{Result, SihdError};
use crate::state_graph::{nearest_vertex, StateGraph};

const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    /// Rollouts the estimate was built from.
    pub n_samples: usize,
    pub bandwidth: Vec<f64>,
    /// Row-major `|S| × |S|` joint mass; zero diagonal.
    pub joint: Vec<f64>,
    pub visitation: Vec<f64>,
    /// Complete graph `𝒢'_s` with edge weights `p(s_i, s_j)`.
    pub graph: StateGraph,
}

/// Scott's rule `σ_j · N^{-1/(D+4)}` per coordinate, floored at 1e-6.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n == 0 {
        return vec![MIN_BANDWIDTH; dim];
    }
    let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (var.sqrt() * factor).max(MIN_BANDWIDTH)
        })
        .collect()
}

/// Log of the normalized product-Gaussian KDE at `query`.
pub fn kde_log_density(points: &[Vec<f64>], bandwidth: &[f64], query: &[f64]) -> f64 {
    let log_norm: f64 = bandwidth
        .iter()
        .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum();
    let terms: Vec<f64> = points
        .iter()
        .map(|p| {
            -0.5 * p
                .iter()
                .zip(query)
                .zip(bandwidth)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum::<f64>()
        })
        .collect();
    log_sum_exp(&terms) - (points.len() as f64).ln() + log_norm
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl TransitionModel {
    /// Fit from state pairs (pooled as given) and evaluate at every pair of
    /// distinct vertices.
    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)], vertices: &[Vec<f64>], n_samples: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(SihdError::InvalidArgument("no transition pairs to fit".into()));
        }
        let d = pairs[0].0.len();
        let points: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        if points.iter().any(|p| p.len() != 2 * d) {
            return Err(SihdError::DimensionMismatch("transition pairs of unequal width".into()));
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != d) {
            return Err(SihdError::DimensionMismatch(format!(
                "vertex of dimension {} against {d}-dimensional samples",
                v.len()
            )));
        }
        let bandwidth = scott_bandwidth(&points);
        let nv = vertices.len();
        // squared scaled distances from each vertex to each sample's halves
        let half = |offset: usize| -> Vec<Vec<f64>> {
            vertices
                .iter()
                .map(|v| {
                    points
                        .iter()
                        .map(|p| {
                            (0..d)
                                .map(|j| ((v[j] - p[offset + j]) / bandwidth[offset + j]).powi(2))
                                .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let (qa, qb) = (half(0), half(d));
        let mut log_p = vec![f64::NEG_INFINITY; nv * nv];
        let mut buf = vec![0.0; points.len()];
        for i in 0..nv {
            for j in 0..nv {
                if i == j {
                    continue;
                }
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = -0.5 * (qa[i][n] + qb[j][n]);
                }
                log_p[i * nv + j] = log_sum_exp(&buf);
            }
        }
        let m = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut joint: Vec<f64> = log_p
            .iter()
            .map(|&l| if m.is_finite() { (l - m).exp() } else { 0.0 })
            .collect();
        for i in 0..nv {
            for j in i + 1..nv {
                let s = 0.5 * (joint[i * nv + j] + joint[j * nv + i]);
                joint[i * nv + j] = s;
                joint[j * nv + i] = s;
            }
        }
        let total: f64 = joint.iter().sum();
        if !(total > 0.0) {
            return Err(SihdError::DegenerateSimilarity("transition density vanished on every vertex pair".into()));
        }
        for p in &mut joint {
            *p /= total;
        }
        Self::from_joint(vertices.to_vec(), joint, n_samples, bandwidth)
    }

    /// Assemble from an already normalized symmetric joint mass.
    pub fn from_joint(vertices: Vec<Vec<f64>>, joint: Vec<f64>, n_samples: usize, bandwidth: Vec<f64>) -> Result<Self> {
        let nv = vertices.len();
        if joint.len() != nv * nv {
            return Err(SihdError::ShapeMismatch {
                expected: nv * nv,
                got: joint.len(),
            });
        }
        if joint.iter().any(|&p| !(p >= 0.0)) {
            return Err(SihdError::InvalidArgument("negative or non-finite transition mass".into()));
        }
        let visitation: Vec<f64> = (0..nv)
            .map(|s| (0..nv).filter(|&i| i != s).map(|i| joint[i * nv + s]).sum())
            .collect();
        let graph = StateGraph::from_dense(vertices, &joint)?;
        Ok(TransitionModel {
            n_samples,
            bandwidth,
            joint,
            visitation,
            graph,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.visitation.len()
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.n_vertices() + j]
    }
}

/// Adjacent state pairs of generated sequences, pooled in both orders.
pub fn pooled_pairs(sequences: &[Vec<Vec<f64>>], state_dim: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut pairs = Vec::new();
    for seq in sequences {
        for w in seq.windows(2) {
            let (a, b) = (w[0][..state_dim].to_vec(), w[1][..state_dim].to_vec());
            pairs.push((a.clone(), b.clone()));
            pairs.push((b, a));
        }
    }
    pairs
}

/// Unconditional layer-1 rollouts, for estimates that use the network under
/// training rather than its EMA shadow.
pub fn unconditional_rollouts<R: Rng + ?Sized>(
    layer1: &LayerModel,
    use_ema: bool,
    schedule: &VarianceSchedule,
    opts: SampleOptions,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let requests = vec![RawRequest::default(); n];
    if use_ema {
        layer1.generate(&requests, schedule, opts, rng)
    } else {
        layer1.generate_with(&layer1.net, &requests, schedule, opts, rng)
    }
}

/// Generate `n` unconditional layer-1 rollouts and fit a [`TransitionModel`]
/// over `vertices`.
pub fn estimate_transitions<R: Rng + ?Sized>(
    layer1: &LayerModel,
    state_dim: usize,
    schedule: &VarianceSchedule,
    opts: SampleOptions,
    n: usize,
    rng: &mut R,
    vertices: &[Vec<f64>],
) -> Result<TransitionModel> {
    if layer1.steps_trained == 0 {
        return Err(SihdError::Untrained);
    }
    if n < 2 {
        return Err(SihdError::InvalidArgument(format!("need at least 2 rollouts, got {n}")));
    }
    let seqs = unconditional_rollouts(layer1, false, schedule, opts, n, rng)?;
    TransitionModel::from_pairs(&pooled_pairs(&seqs, state_dim), vertices, n)
}

/// `H(S)`, per-height `H(𝒰_h)` and `η_h` for a transition model under a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTerms {
    pub h_s: f64,
    pub layer_entropies: Vec<f64>,
    pub eta: Vec<f64>,
    pub report: BoundReport,
}

impl EntropyTerms {
    /// `H(S) - Σ_h η_h H(𝒰_h)`.
    pub fn lower_bound(&self) -> f64 {
        self.report.lower
    }
}

pub fn entropy_terms(model: &TransitionModel, tree: &EncodingTree) -> Result<EntropyTerms> {
    if model.n_vertices() != tree.n_vertices() {
        return Err(SihdError::VertexMismatch {
            tree: tree.n_vertices(),
            graph: model.n_vertices(),
        });
    }
    let report = bound_check(&model.graph, tree)?;
    Ok(EntropyTerms {
        h_s: report.upper,
        layer_entropies: report.layer_entropies.clone(),
        eta: report.eta.clone(),
        report,
    })
}

/// Loss weights pushing toward rarely visited states:
/// `w_i = max(0, 1 + η·(mean(ℓ) - ℓ_i)/std(ℓ))`, rescaled to mean 1, where
/// `ℓ_i` is the mean log visitation of sample `i`'s vertices.
pub fn surrogate_weights(visitation: &[f64], sample_vertices: &[Vec<usize>], eta: f64) -> Vec<f64> {
    let n = sample_vertices.len();
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = visitation.iter().sum();
    let logp: Vec<f64> = sample_vertices
        .iter()
        .map(|vs| {
            if vs.is_empty() {
                return 0.0;
            }
            vs.iter()
                .map(|&v| (visitation[v] / total).max(1e-12).ln())
                .sum::<f64>()
                / vs.len() as f64
        })
        .collect();
    let mean = logp.iter().sum::<f64>() / n as f64;
    let std = (logp.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(std > 0.0) {
        return vec![1.0; n];
    }
    let raw: Vec<f64> = logp.iter().map(|l| (1.0 + eta * (mean - l) / std).max(0.0)).collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    if m > 0.0 {
        raw.iter().map(|w| w / m).collect()
    } else {
        vec![1.0; n]
    }
}

/// Number of distinct vertices nearest to any generated state.
pub fn vertex_coverage(sequences: &[Vec<Vec<f64>>], state_dim: usize, vertices: &[Vec<f64>]) -> usize {
    let mut seen = vec![false; vertices.len()];
    for seq in sequences {
        for slot in seq {
            if let Some(v) = nearest_vertex(vertices, &slot[..state_dim]) {
                seen[v] = true;
            }
        }
    }
    seen.iter().filter(|&&s| s).count()
}

impl DiffusionStack {
    /// Unconditional layer-1 rollouts with the EMA weights.
    pub fn unconditional_samples<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<Vec<f64>>>> {
        if !self.is_trained() {
            return Err(SihdError::Untrained);
        }
        let opts = self.sample_options();
        unconditional_rollouts(self.layer(1), true, &self.schedule, opts, n, rng)
    }
}
