//! Trajectory data model and JSON-Lines dataset files.
//!
//! Each line of a dataset file is one trajectory:
//!
//! ```text
//! {"states":[[x,y],...],"actions":[[dx,dy],...],"rewards":[r,...]}
//! ```
//!
//! All three arrays share one length `T + 1`; the final action and reward are a
//! terminal placeholder (zero vector and `0.0` for synthesized data). Files
//! written by [`save_dataset`] are canonical: trajectories in file order and
//! every float printed with 17 significant digits, so a load/save cycle is
//! byte-identical.

mod maze;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, SihdError};

pub use maze::{synthesize_dataset, Cell, EpisodeResult, MazeEnv, RandomPolicy, StepOutcome, ACTIONS};

/// One episode of states, actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, rewards: Vec<f64>) -> Result<Self> {
        let traj = Trajectory {
            states,
            actions,
            rewards,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n < 2 {
            return Err(SihdError::InvalidTrajectory(format!(
                "needs at least 2 timesteps, got {n}"
            )));
        }
        if self.actions.len() != n || self.rewards.len() != n {
            return Err(SihdError::InvalidTrajectory(format!(
                "length mismatch: {} states, {} actions, {} rewards",
                n,
                self.actions.len(),
                self.rewards.len()
            )));
        }
        let d = self.state_dim();
        let m = self.action_dim();
        if d == 0 {
            return Err(SihdError::InvalidTrajectory("zero-dimensional states".into()));
        }
        for (t, s) in self.states.iter().enumerate() {
            if s.len() != d {
                return Err(SihdError::DimensionMismatch(format!(
                    "state at t={t} has dimension {}, expected {d}",
                    s.len()
                )));
            }
        }
        for (t, a) in self.actions.iter().enumerate() {
            if a.len() != m {
                return Err(SihdError::DimensionMismatch(format!(
                    "action at t={t} has dimension {}, expected {m}",
                    a.len()
                )));
            }
        }
        let finite = self
            .states
            .iter()
            .chain(self.actions.iter())
            .flatten()
            .chain(self.rewards.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(SihdError::InvalidTrajectory("non-finite component".into()));
        }
        Ok(())
    }
}

/// Undiscounted sum of the trajectory's rewards.
pub fn cumulative_reward(traj: &Trajectory) -> f64 {
    traj.rewards.iter().sum()
}

/// A non-empty collection of trajectories sharing state and action dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Maximum cumulative reward over all trajectories.
    pub r_max: f64,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(SihdError::EmptyDataset)?;
        let state_dim = first.state_dim();
        let action_dim = first.action_dim();
        for (i, traj) in trajectories.iter().enumerate() {
            traj.validate()?;
            if traj.state_dim() != state_dim || traj.action_dim() != action_dim {
                return Err(SihdError::DimensionMismatch(format!(
                    "trajectory {i} has dims ({}, {}), dataset has ({state_dim}, {action_dim})",
                    traj.state_dim(),
                    traj.action_dim()
                )));
            }
        }
        let r_max = trajectories
            .iter()
            .map(cumulative_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Dataset {
            trajectories,
            state_dim,
            action_dim,
            r_max,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

/// Parse a dataset from JSON-Lines text. Blank lines are ignored.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut trajectories = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrajectory = serde_json::from_str(line).map_err(|e| SihdError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let traj = Trajectory::new(raw.states, raw.actions, raw.rewards).map_err(|e| match e {
            SihdError::DimensionMismatch(m) => {
                SihdError::DimensionMismatch(format!("line {line_no}: {m}"))
            }
            SihdError::InvalidTrajectory(m) => {
                SihdError::InvalidTrajectory(format!("line {line_no}: {m}"))
            }
            other => other,
        })?;
        let these = (traj.state_dim(), traj.action_dim());
        match dims {
            None => dims = Some(these),
            Some(expected) if expected != these => {
                return Err(SihdError::DimensionMismatch(format!(
                    "line {line_no}: dims ({}, {}) differ from first trajectory ({}, {})",
                    these.0, these.1, expected.0, expected.1
                )));
            }
            Some(_) => {}
        }
        trajectories.push(traj);
    }
    Dataset::new(trajectories)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SihdError::io(path, e))?;
    parse_dataset(&text)
}

/// Float formatting used by every canonical artifact: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    // normalize negative zero so canonical files do not depend on its sign
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

fn write_vec(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

fn write_rows(out: &mut String, rows: &[Vec<f64>]) {
    out.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_vec(out, row);
    }
    out.push(']');
}

/// Canonical JSON-Lines text for a dataset.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for traj in &dataset.trajectories {
        out.push_str("{\"states\":");
        write_rows(&mut out, &traj.states);
        out.push_str(",\"actions\":");
        write_rows(&mut out, &traj.actions);
        out.push_str(",\"rewards\":");
        write_vec(&mut out, &traj.rewards);
        let _ = writeln!(out, "}}");
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(dataset)).map_err(|e| SihdError::io(path, e))
}
