//! Flat key-value run configuration (TOML) with `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::MazeEnv;
use crate::diffusion::{GuidanceMode, ScheduleKind, TrainConfig};
use crate::error::{Result, SihdError};
use crate::state_graph::Similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Root seed; every stage derives its own.
    pub seed: u64,

    /// `two-room` (built-in 8x8), `open`, or a path to a text layout.
    pub maze: String,
    pub grid_width: usize,
    pub grid_height: usize,
    pub jitter: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
    pub episodes: usize,
    pub collector_noise: f64,

    pub dedup_tol: f64,
    pub similarity: Similarity,
    pub k_min: usize,
    pub k_max: usize,
    /// Encoding-tree height `𝒦`.
    pub tree_height: usize,

    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub omega: f64,
    pub eta: f64,
    pub guidance: GuidanceMode,
    pub clip_x0: bool,
    pub pad_lens: Vec<usize>,
    pub hidden: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub p_uncond: f64,
    pub refresh_every: usize,
    pub kde_samples: usize,
    pub surrogate: bool,
    pub grad_clip: f64,
    pub pin_prob: f64,

    pub goal_tolerance: f64,
    pub horizon: usize,
    /// Episodes per evaluation seed.
    pub eval_episodes: usize,
    pub eval_seeds: usize,
    /// Re-plan from the observed state before every action instead of
    /// executing the imagined plan open-loop.
    pub closed_loop: bool,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Config {
            seed: 0,
            maze: "two-room".into(),
            grid_width: 8,
            grid_height: 8,
            jitter: 0.1,
            goal_reward: 1.0,
            max_steps: 64,
            episodes: 200,
            collector_noise: 0.3,
            dedup_tol: 0.3,
            similarity: Similarity::Rbf,
            k_min: 2,
            k_max: 16,
            tree_height: 3,
            diffusion_steps: t.diffusion_steps,
            schedule: t.schedule,
            omega: t.omega,
            eta: t.eta,
            guidance: t.guidance,
            clip_x0: t.clip,
            pad_lens: vec![12, 8, 12],
            hidden: t.hidden,
            train_steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            ema_decay: t.ema_decay,
            p_uncond: t.p_uncond,
            refresh_every: t.refresh_every,
            kde_samples: t.kde_samples,
            surrogate: t.surrogate,
            grad_clip: t.grad_clip,
            pin_prob: t.pin_prob,
            goal_tolerance: 0.5,
            horizon: 64,
            eval_episodes: 10,
            eval_seeds: 5,
            closed_loop: false,
        }
    }
}

fn bad(msg: impl Into<String>) -> SihdError {
    SihdError::Config(msg.into())
}

/// Parse a single override value as a TOML literal, falling back to a bare
/// string (`maze=open` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    /// Parse TOML text, apply `key=value` overrides, and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bad(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| SihdError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(bad(format!("{name} = {v} outside [0, 1]")))
            }
        };
        let positive = |name: &str, v: usize| -> Result<()> {
            if v > 0 {
                Ok(())
            } else {
                Err(bad(format!("{name} must be positive")))
            }
        };
        if self.tree_height < 2 {
            return Err(bad(format!(
                "tree_height = {} but a hierarchy needs at least 2 levels",
                self.tree_height
            )));
        }
        if self.diffusion_steps < 2 {
            return Err(bad("diffusion_steps must be at least 2"));
        }
        prob("collector_noise", self.collector_noise)?;
        prob("omega", self.omega)?;
        prob("p_uncond", self.p_uncond)?;
        prob("ema_decay", self.ema_decay)?;
        prob("pin_prob", self.pin_prob)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(bad(format!("eta = {} must be a non-negative number", self.eta)));
        }
        if !(self.dedup_tol >= 0.0) {
            return Err(bad("dedup_tol must be non-negative"));
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) {
            return Err(bad("jitter must lie in [0, 0.5)"));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(bad("goal_tolerance must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip >= 0.0) {
            return Err(bad("learning_rate must be positive and grad_clip non-negative"));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(bad(format!("k range [{}, {}] is empty", self.k_min, self.k_max)));
        }
        if self.pad_lens.iter().any(|&p| p < 2) {
            return Err(bad("every pad length needs at least 2 slots"));
        }
        if self.pad_lens.len() > 1 && self.pad_lens.len() != self.tree_height {
            return Err(bad(format!(
                "pad_lens has {} entries for {} layers",
                self.pad_lens.len(),
                self.tree_height
            )));
        }
        positive("episodes", self.episodes)?;
        positive("hidden", self.hidden)?;
        positive("batch_size", self.batch_size)?;
        positive("max_steps", self.max_steps)?;
        positive("grid_width", self.grid_width)?;
        positive("grid_height", self.grid_height)?;
        if self.kde_samples < 2 {
            return Err(bad("kde_samples must be at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            pad_lens: self.pad_lens.clone(),
            steps: self.train_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ema_decay: self.ema_decay,
            p_uncond: self.p_uncond,
            omega: self.omega,
            eta: self.eta,
            refresh_every: self.refresh_every,
            kde_samples: self.kde_samples,
            guidance: self.guidance,
            clip: self.clip_x0,
            schedule: self.schedule,
            diffusion_steps: self.diffusion_steps,
            grad_clip: self.grad_clip,
            surrogate: self.surrogate,
            pin_prob: self.pin_prob,
            seed: stage_seed(self.seed, "train"),
        }
    }

    pub fn env(&self) -> Result<MazeEnv> {
        match self.maze.as_str() {
            "two-room" => {
                let mut env = MazeEnv::default_maze();
                env.jitter = self.jitter;
                env.goal_reward = self.goal_reward;
                env.max_steps = self.max_steps;
                Ok(env)
            }
            "open" => {
                let mut env = MazeEnv::open(self.grid_width, self.grid_height, self.jitter)?;
                env.goal_reward = self.goal_reward;
                env.max_steps = self.max_steps;
                Ok(env)
            }
            path => {
                let text = fs::read_to_string(path).map_err(|e| SihdError::io(path, e))?;
                MazeEnv::from_text(&text, self.jitter, self.goal_reward, self.max_steps)
            }
        }
    }
}

/// Seed for a named stage: the first 8 bytes of `sha256(seed_le || stage)`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
