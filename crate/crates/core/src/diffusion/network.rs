//! Fully connected noise-prediction network with hand-written backprop.
//!
//! Input row: `[flattened noised sequence, condition embedding (16), step
//! embedding (16)]`, two SiLU hidden layers, linear output of the sequence's
//! shape. All parameters live in one flat vector:
//!
//! ```text
//! cond_w[16] cond_b[16] null[16] W1[(N+32)×H] b1[H] W2[H×H] b2[H] W3[H×N] b3[N]
//! ```
//!
//! with matrices row-major (`fan_in × fan_out`).

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Result, SihdError};

pub const COND_DIM: usize = 16;
pub const STEP_DIM: usize = 16;

/// Network dimensions: `slots × features` sequence, hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub slots: usize,
    pub features: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    cond_w: usize,
    cond_b: usize,
    null: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl NetShape {
    pub fn seq_len(&self) -> usize {
        self.slots * self.features
    }

    fn in_dim(&self) -> usize {
        self.seq_len() + COND_DIM + STEP_DIM
    }

    fn offsets(&self) -> Offsets {
        let (n, h, i) = (self.seq_len(), self.hidden, self.in_dim());
        let cond_w = 0;
        let cond_b = cond_w + COND_DIM;
        let null = cond_b + COND_DIM;
        let w1 = null + COND_DIM;
        let b1 = w1 + i * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h * n;
        Offsets {
            cond_w,
            cond_b,
            null,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + n,
        }
    }

    pub fn n_params(&self) -> usize {
        self.offsets().end
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(k: usize) -> [f64; STEP_DIM] {
    let mut out = [0.0; STEP_DIM];
    let half = STEP_DIM / 2;
    for i in 0..half {
        let freq = (-(1000f64).ln() * i as f64 / half as f64).exp();
        let arg = k as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// How the guidance weight ω combines conditional and null information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// `ε(x, (1-ω)·embed(y) + ω·∅, k)`.
    #[default]
    Embedding,
    /// `(1+ω)·ε(x, embed(y), k) - ω·ε(x, ∅, k)`.
    Output,
}

impl std::str::FromStr for GuidanceMode {
    type Err = SihdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(GuidanceMode::Embedding),
            "output" => Ok(GuidanceMode::Output),
            other => Err(SihdError::InvalidArgument(format!("unknown guidance mode {other:?}"))),
        }
    }
}

/// Noise-prediction network for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub layer: usize,
    pub shape: NetShape,
    pub params: Vec<f64>,
}

/// One training example: noised sequence, target noise, condition, blend
/// weight toward `∅` and loss weight. Entries listed in `fixed` were held at
/// their clean value (as inpainted entries are during sampling) and carry no
/// loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub noised: Vec<f64>,
    pub noise: Vec<f64>,
    pub step: usize,
    pub y: f64,
    pub blend: f64,
    pub weight: f64,
    pub fixed: Vec<usize>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

struct Cache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    act2: Array2<f64>,
}

impl Denoiser {
    /// Uniform `±1/√fan_in` weights, zero biases, standard normal condition
    /// and null embeddings.
    pub fn new<R: Rng + ?Sized>(layer: usize, shape: NetShape, rng: &mut R) -> Result<Self> {
        if shape.slots == 0 || shape.features == 0 || shape.hidden == 0 {
            return Err(SihdError::InvalidArgument(format!("degenerate network shape {shape:?}")));
        }
        let o = shape.offsets();
        let mut params = vec![0.0; o.end];
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        for p in &mut params[o.cond_w..o.cond_b] {
            *p = normal.sample(rng);
        }
        for p in &mut params[o.null..o.w1] {
            *p = normal.sample(rng);
        }
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
            for p in &mut params[range] {
                *p = dist.sample(rng);
            }
        };
        fill(o.w1..o.b1, shape.in_dim());
        fill(o.w2..o.b2, shape.hidden);
        fill(o.w3..o.b3, shape.hidden);
        Ok(Denoiser {
            layer,
            shape,
            params,
        })
    }

    pub fn from_params(layer: usize, shape: NetShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.n_params() {
            return Err(SihdError::ShapeMismatch {
                expected: shape.n_params(),
                got: params.len(),
            });
        }
        Ok(Denoiser {
            layer,
            shape,
            params,
        })
    }

    /// `embed(y) = y·cond_w + cond_b`.
    pub fn embed(&self, y: f64) -> [f64; COND_DIM] {
        let o = self.shape.offsets();
        let mut e = [0.0; COND_DIM];
        for (i, ei) in e.iter_mut().enumerate() {
            *ei = y * self.params[o.cond_w + i] + self.params[o.cond_b + i];
        }
        e
    }

    /// The learned null embedding `∅`.
    pub fn null_embedding(&self) -> [f64; COND_DIM] {
        let o = self.shape.offsets();
        let mut e = [0.0; COND_DIM];
        e.copy_from_slice(&self.params[o.null..o.null + COND_DIM]);
        e
    }

    /// `(1-ω)·embed(y) + ω·∅`.
    pub fn blended_embedding(&self, y: f64, omega: f64) -> [f64; COND_DIM] {
        let (e, n) = (self.embed(y), self.null_embedding());
        let mut out = [0.0; COND_DIM];
        for i in 0..COND_DIM {
            out[i] = (1.0 - omega) * e[i] + omega * n[i];
        }
        out
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.seq_len() {
            return Err(SihdError::ShapeMismatch {
                expected: self.shape.seq_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Network output for a single sequence under an explicit condition embedding.
    pub fn predict_with_embedding(&self, x: &[f64], emb: &[f64; COND_DIM], k: usize) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let out = self.forward_batch(&[x], &[*emb], &[k])?;
        Ok(out.row(0).to_vec())
    }

    /// Batched forward pass; one embedding and step per row.
    pub fn forward_batch(
        &self,
        xs: &[&[f64]],
        embs: &[[f64; COND_DIM]],
        steps: &[usize],
    ) -> Result<Array2<f64>> {
        for x in xs {
            self.check_len(x)?;
        }
        let input = self.assemble(xs, embs, steps);
        Ok(self.forward_cached(input).0)
    }

    fn assemble(&self, xs: &[&[f64]], embs: &[[f64; COND_DIM]], steps: &[usize]) -> Array2<f64> {
        let n = self.shape.seq_len();
        let mut input = Array2::zeros((xs.len(), self.shape.in_dim()));
        for (b, ((x, emb), &k)) in xs.iter().zip(embs).zip(steps).enumerate() {
            let mut row = input.row_mut(b);
            for (dst, src) in row.iter_mut().zip(x.iter()) {
                *dst = *src;
            }
            for i in 0..COND_DIM {
                row[n + i] = emb[i];
            }
            let se = step_embedding(k);
            for i in 0..STEP_DIM {
                row[n + COND_DIM + i] = se[i];
            }
        }
        input
    }

    fn mat(&self, start: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[start..start + rows * cols])
            .expect("offsets match shape")
    }

    fn forward_cached(&self, input: Array2<f64>) -> (Array2<f64>, Cache) {
        let sh = self.shape;
        let o = sh.offsets();
        let (n, h) = (sh.seq_len(), sh.hidden);
        let row = |start: usize, len: usize| {
            ndarray::ArrayView1::from(&self.params[start..start + len])
        };
        let pre1 = input.dot(&self.mat(o.w1, sh.in_dim(), h)) + row(o.b1, h);
        let act1 = pre1.mapv(silu);
        let pre2 = act1.dot(&self.mat(o.w2, h, h)) + row(o.b2, h);
        let act2 = pre2.mapv(silu);
        let out = act2.dot(&self.mat(o.w3, h, n)) + row(o.b3, n);
        (
            out,
            Cache {
                input,
                pre1,
                act1,
                pre2,
                act2,
            },
        )
    }

    /// Weighted noise-prediction MSE
    /// `Σ_i w_i Σ_{j free} (ε̂_ij - ε_ij)² / (B·N)` and its gradient with
    /// respect to every parameter.
    pub fn mse_and_grad(&self, batch: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(SihdError::InvalidArgument("empty training batch".into()));
        }
        for ex in batch {
            self.check_len(&ex.noised)?;
            self.check_len(&ex.noise)?;
        }
        let sh = self.shape;
        let o = sh.offsets();
        let (n, h) = (sh.seq_len(), sh.hidden);
        let xs: Vec<&[f64]> = batch.iter().map(|e| e.noised.as_slice()).collect();
        let embs: Vec<[f64; COND_DIM]> = batch.iter().map(|e| self.blended_embedding(e.y, e.blend)).collect();
        let steps: Vec<usize> = batch.iter().map(|e| e.step).collect();
        let (out, cache) = self.forward_cached(self.assemble(&xs, &embs, &steps));

        let scale = 1.0 / (batch.len() * n) as f64;
        let mut loss = 0.0;
        let mut d_out = Array2::zeros((batch.len(), n));
        for (b, ex) in batch.iter().enumerate() {
            for j in 0..n {
                if ex.fixed.contains(&j) {
                    continue;
                }
                let diff = out[[b, j]] - ex.noise[j];
                loss += ex.weight * diff * diff * scale;
                d_out[[b, j]] = 2.0 * ex.weight * diff * scale;
            }
        }

        let mut grad = vec![0.0; o.end];
        let put = |grad: &mut Vec<f64>, start: usize, m: &Array2<f64>| {
            for (g, v) in grad[start..start + m.len()].iter_mut().zip(m.iter()) {
                *g = *v;
            }
        };
        let put_sum = |grad: &mut Vec<f64>, start: usize, m: &Array2<f64>| {
            let s = m.sum_axis(Axis(0));
            for (g, v) in grad[start..start + s.len()].iter_mut().zip(s.iter()) {
                *g = *v;
            }
        };

        put(&mut grad, o.w3, &cache.act2.t().dot(&d_out));
        put_sum(&mut grad, o.b3, &d_out);
        let d_act2 = d_out.dot(&self.mat(o.w3, h, n).t());
        let d_pre2 = &d_act2 * &cache.pre2.mapv(silu_grad);
        put(&mut grad, o.w2, &cache.act1.t().dot(&d_pre2));
        put_sum(&mut grad, o.b2, &d_pre2);
        let d_act1 = d_pre2.dot(&self.mat(o.w2, h, h).t());
        let d_pre1 = &d_act1 * &cache.pre1.mapv(silu_grad);
        put(&mut grad, o.w1, &cache.input.t().dot(&d_pre1));
        put_sum(&mut grad, o.b1, &d_pre1);
        let d_input = d_pre1.dot(&self.mat(o.w1, sh.in_dim(), h).t());
        let d_emb = d_input.slice(s![.., n..n + COND_DIM]);
        for (b, ex) in batch.iter().enumerate() {
            let keep = 1.0 - ex.blend;
            for i in 0..COND_DIM {
                let g = d_emb[[b, i]];
                grad[o.cond_w + i] += keep * ex.y * g;
                grad[o.cond_b + i] += keep * g;
                grad[o.null + i] += ex.blend * g;
            }
        }
        Ok((loss, grad))
    }
}

/// Guided noise prediction (condition blend in embedding space, or the
/// conventional output-space blend).
pub fn cfg_predict_mode(
    denoiser: &Denoiser,
    x: &[f64],
    y: f64,
    omega: f64,
    k: usize,
    mode: GuidanceMode,
) -> Result<Vec<f64>> {
    match mode {
        GuidanceMode::Embedding => denoiser.predict_with_embedding(x, &denoiser.blended_embedding(y, omega), k),
        GuidanceMode::Output => {
            let c = denoiser.predict_with_embedding(x, &denoiser.embed(y), k)?;
            let u = denoiser.predict_with_embedding(x, &denoiser.null_embedding(), k)?;
            Ok(c.iter().zip(&u).map(|(c, u)| (1.0 + omega) * c - omega * u).collect())
        }
    }
}

/// `ε_θ(x, (1-ω)·embed(y) + ω·∅, k)`.
pub fn cfg_predict(denoiser: &Denoiser, x: &[f64], y: f64, omega: f64, k: usize) -> Result<Vec<f64>> {
    cfg_predict_mode(denoiser, x, y, omega, k, GuidanceMode::Embedding)
}
