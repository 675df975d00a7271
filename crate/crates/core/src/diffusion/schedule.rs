use serde::{Deserialize, Serialize};

use crate::error::{Result, SihdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    #[default]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = SihdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(SihdError::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Per-step noise variances `β_1..β_K` and the cumulative products
/// `ᾱ_k = Π_{j≤k} (1 - β_j)`. Index 0 of `alpha_bar` is the noiseless
/// `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

const LINEAR_START: f64 = 1e-4;
const LINEAR_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<VarianceSchedule> {
    if steps < 2 {
        return Err(SihdError::InvalidArgument(format!(
            "diffusion needs at least 2 steps, got {steps}"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| LINEAR_START + (LINEAR_END - LINEAR_START) * i as f64 / (steps - 1) as f64)
            .collect(),
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2)
                    .cos()
                    .powi(2)
            };
            (1..=steps)
                .map(|k| (1.0 - f(k as f64) / f(k as f64 - 1.0)).clamp(1e-8, MAX_BETA))
                .collect()
        }
    };
    VarianceSchedule::from_betas(kind, betas)
}

impl VarianceSchedule {
    pub fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(SihdError::InvalidArgument(
                "schedule needs at least 2 variances, each in (0, 1)".into(),
            ));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let last = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(last * (1.0 - b));
        }
        Ok(VarianceSchedule {
            kind,
            betas,
            alpha_bar,
        })
    }

    /// Number of diffusion steps `K`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_k` for `1 <= k <= K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_k` for `0 <= k <= K`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }
}

/// Closed-form forward corruption `x_k = √ᾱ_k · x_0 + √(1 - ᾱ_k) · ε`. Step 0
/// returns `x_0` unchanged.
pub fn forward_diffuse(
    x0: &[f64],
    k: usize,
    schedule: &VarianceSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if noise.len() != x0.len() {
        return Err(SihdError::ShapeMismatch {
            expected: x0.len(),
            got: noise.len(),
        });
    }
    if k > schedule.steps() {
        return Err(SihdError::InvalidArgument(format!(
            "step {k} beyond the {} step schedule",
            schedule.steps()
        )));
    }
    if k == 0 {
        return Ok(x0.to_vec());
    }
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_two_steps_hits_endpoints() {
        let s = make_schedule(ScheduleKind::Linear, 2).unwrap();
        assert_eq!(s.betas(), &[1e-4, 2e-2]);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [2, 5, 20, 100] {
                let s = make_schedule(kind, steps).unwrap();
                for k in 1..=steps {
                    assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
                    assert!(s.beta(k) > 0.0 && s.beta(k) < 1.0);
                }
            }
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(make_schedule(ScheduleKind::Linear, 1).is_err());
        assert!(make_schedule(ScheduleKind::Cosine, 0).is_err());
    }

    #[test]
    fn forward_identity_and_zero_signal() {
        let s = make_schedule(ScheduleKind::Cosine, 10).unwrap();
        let x = [0.5, -1.0, 2.0];
        let e = [0.1, 0.2, -0.3];
        assert_eq!(forward_diffuse(&x, 0, &s, &e).unwrap(), x.to_vec());
        let z = forward_diffuse(&[0.0; 3], 4, &s, &e).unwrap();
        let c = (1.0 - s.alpha_bar(4)).sqrt();
        for (zi, ei) in z.iter().zip(e) {
            assert_eq!(*zi, c * ei);
        }
        assert!(matches!(
            forward_diffuse(&x, 1, &s, &e[..2]),
            Err(SihdError::ShapeMismatch { expected: 3, got: 2 })
        ));
    }
}
