//! Reverse diffusion: posterior means, single steps and full rollouts with
//! inpainted (fixed) entries.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::network::{cfg_predict_mode, Denoiser, GuidanceMode, COND_DIM};
use super::schedule::VarianceSchedule;
use crate::error::{Result, SihdError};

/// Posterior mean of `x_{k-1}` given `x_k` and predicted noise.
///
/// Computed through the implied clean estimate
/// `x̂_0 = (x_k - √(1-ᾱ_k)·ε̂)/√ᾱ_k`, optionally clipped to `[-1, 1]`; without
/// clipping this equals `(x_k - β_k/√(1-ᾱ_k)·ε̂)/√(1-β_k)`.
pub fn posterior_mean(x: &[f64], eps_hat: &[f64], k: usize, schedule: &VarianceSchedule, clip: bool) -> Vec<f64> {
    let ab = schedule.alpha_bar(k);
    let ab_prev = schedule.alpha_bar(k - 1);
    let beta = schedule.beta(k);
    let c0 = beta * ab_prev.sqrt() / (1.0 - ab);
    let ck = (1.0 - ab_prev) * (1.0 - beta).sqrt() / (1.0 - ab);
    x.iter()
        .zip(eps_hat)
        .map(|(&xk, &e)| {
            let mut x0 = (xk - (1.0 - ab).sqrt() * e) / ab.sqrt();
            if clip {
                x0 = x0.clamp(-1.0, 1.0);
            }
            c0 * x0 + ck * xk
        })
        .collect()
}

/// Sampling options shared by every reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub omega: f64,
    pub mode: GuidanceMode,
    pub clip: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            omega: 0.1,
            mode: GuidanceMode::Embedding,
            clip: true,
        }
    }
}

/// One reverse step `x_k → x_{k-1}` with variance `β_k`; no noise is added at
/// `k = 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    denoiser: &Denoiser,
    x: &[f64],
    y: f64,
    k: usize,
    schedule: &VarianceSchedule,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.steps() {
        return Err(SihdError::InvalidArgument(format!(
            "reverse step {k} outside 1..={}",
            schedule.steps()
        )));
    }
    let eps = cfg_predict_mode(denoiser, x, y, opts.omega, k, opts.mode)?;
    let mut mean = posterior_mean(x, &eps, k, schedule, opts.clip);
    if k > 1 {
        let sd = schedule.beta(k).sqrt();
        for m in &mut mean {
            let z: f64 = StandardNormal.sample(rng);
            *m += sd * z;
        }
    }
    Ok(mean)
}

/// Entries of a flattened sequence held fixed during sampling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inpaint {
    pub fixed: Vec<(usize, f64)>,
}

impl Inpaint {
    pub fn apply(&self, x: &mut [f64]) {
        for &(i, v) in &self.fixed {
            x[i] = v;
        }
    }
}

/// A conditioning request for one sequence of a batch: `None` is the null
/// condition (pure `∅`).
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub y: Option<f64>,
    pub inpaint: Inpaint,
}

/// Full `K`-step rollouts from standard normal noise, batched across
/// requests. Fixed entries are overwritten before every network call and
/// once more at the end.
pub fn sample_batch<R: Rng + ?Sized>(
    denoiser: &Denoiser,
    requests: &[Request],
    schedule: &VarianceSchedule,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = denoiser.shape.seq_len();
    let mut xs: Vec<Vec<f64>> = requests
        .iter()
        .map(|r| {
            let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            r.inpaint.apply(&mut x);
            x
        })
        .collect();
    let null = denoiser.null_embedding();
    let cond: Vec<Option<[f64; COND_DIM]>> = requests.iter().map(|r| r.y.map(|y| denoiser.embed(y))).collect();
    let blended: Vec<[f64; COND_DIM]> = requests
        .iter()
        .map(|r| match r.y {
            Some(y) => denoiser.blended_embedding(y, opts.omega),
            None => null,
        })
        .collect();
    for k in (1..=schedule.steps()).rev() {
        let steps = vec![k; xs.len()];
        let views: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let eps = match opts.mode {
            GuidanceMode::Embedding => denoiser.forward_batch(&views, &blended, &steps)?,
            GuidanceMode::Output => {
                let c_embs: Vec<[f64; COND_DIM]> = cond.iter().map(|c| c.unwrap_or(null)).collect();
                let c = denoiser.forward_batch(&views, &c_embs, &steps)?;
                let u = denoiser.forward_batch(&views, &vec![null; xs.len()], &steps)?;
                let mut out = c.clone();
                for (b, cb) in cond.iter().enumerate() {
                    if cb.is_some() {
                        for j in 0..n {
                            out[[b, j]] = (1.0 + opts.omega) * c[[b, j]] - opts.omega * u[[b, j]];
                        }
                    }
                }
                out
            }
        };
        for (b, x) in xs.iter_mut().enumerate() {
            let e = eps.row(b).to_vec();
            let mut next = posterior_mean(x, &e, k, schedule, opts.clip);
            if k > 1 {
                let sd = schedule.beta(k).sqrt();
                for m in &mut next {
                    let z: f64 = StandardNormal.sample(rng);
                    *m += sd * z;
                }
            }
            requests[b].inpaint.apply(&mut next);
            *x = next;
        }
    }
    Ok(xs)
}
