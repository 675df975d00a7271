//! Deterministic grid maze with continuous jittered observations.
//!
//! Cells are unit squares; cell `(x, y)` is observed as its center
//! `(x + 0.5, y + 0.5)` plus uniform jitter in `[-jitter, jitter]` per
//! coordinate. Actions are 2D displacement vectors. The environment snaps an
//! action to the unit move along its dominant axis (ties go to x); actions whose
//! largest component is below 0.5 are no-ops, as are moves into walls or off the
//! grid. Reaching the goal cell pays `goal_reward` and ends the episode.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Trajectory};
use crate::error::{Result, SihdError};

/// Grid cell as `(x, y)`.
pub type Cell = (usize, usize);

/// The four unit moves: +x, -x, +y, -y.
pub const ACTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeEnv {
    pub width: usize,
    pub height: usize,
    /// Row-major wall mask, index `y * width + x`.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
    /// Half-width of the uniform observation jitter.
    pub jitter: f64,
    pub goal_reward: f64,
    /// Episode length cap used by the data collector.
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub cell: Cell,
    pub reward: f64,
    pub done: bool,
}

/// Outcome of executing an action sequence open-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub reached: bool,
    pub cumulative_reward: f64,
    /// Actions executed before termination.
    pub steps: usize,
    pub cells: Vec<Cell>,
}

impl MazeEnv {
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: Cell,
        goal: Cell,
        jitter: f64,
        goal_reward: f64,
        max_steps: usize,
    ) -> Result<Self> {
        let env = MazeEnv {
            width,
            height,
            walls,
            start,
            goal,
            jitter,
            goal_reward,
            max_steps,
        };
        env.validate()?;
        Ok(env)
    }

    /// Wall-free grid with start in the `(0, 0)` corner and goal in the opposite one.
    pub fn open(width: usize, height: usize, jitter: f64) -> Result<Self> {
        let cells = width * height;
        MazeEnv::new(
            width,
            height,
            vec![false; cells],
            (0, 0),
            (width.saturating_sub(1), height.saturating_sub(1)),
            jitter,
            1.0,
            cells.max(1),
        )
    }

    /// The 8x8 two-room maze used by the default pipeline configuration.
    pub fn default_maze() -> Self {
        const LAYOUT: &str = "\
S.......
........
........
.####.##
........
........
........
.......G
";
        MazeEnv::from_text(LAYOUT, 0.1, 1.0, 64).expect("built-in layout is valid")
    }

    /// Parse a text layout: one line per row starting at `y = 0`, `#` for walls,
    /// `.` for free cells, `S`/`G` for start and goal. Without `S`/`G` the first
    /// and last free cells in row-major order are used.
    pub fn from_text(text: &str, jitter: f64, goal_reward: f64, max_steps: usize) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut walls = Vec::with_capacity(width * height);
        let (mut start, mut goal) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(SihdError::InvalidEnv(format!(
                    "row {y} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        walls.push(false);
                        start = Some((x, y));
                    }
                    'G' => {
                        walls.push(false);
                        goal = Some((x, y));
                    }
                    other => {
                        return Err(SihdError::InvalidEnv(format!(
                            "unknown layout character {other:?} at ({x}, {y})"
                        )))
                    }
                }
            }
        }
        let free: Vec<Cell> = (0..width * height)
            .filter(|&i| !walls[i])
            .map(|i| (i % width, i / width))
            .collect();
        let start = start
            .or_else(|| free.first().copied())
            .ok_or_else(|| SihdError::InvalidEnv("no free cells".into()))?;
        let goal = goal
            .or_else(|| free.last().copied())
            .ok_or_else(|| SihdError::InvalidEnv("no free cells".into()))?;
        MazeEnv::new(width, height, walls, start, goal, jitter, goal_reward, max_steps)
    }

    /// Apply a wall layout (as accepted by [`MazeEnv::from_text`]) to a grid of
    /// the given size.
    pub fn with_layout(
        width: usize,
        height: usize,
        layout: &str,
        jitter: f64,
        goal_reward: f64,
        max_steps: usize,
    ) -> Result<Self> {
        let env = MazeEnv::from_text(layout, jitter, goal_reward, max_steps)?;
        if env.width != width || env.height != height {
            return Err(SihdError::InvalidEnv(format!(
                "layout is {}x{}, grid is {width}x{height}",
                env.width, env.height
            )));
        }
        Ok(env)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SihdError::InvalidEnv("empty grid".into()));
        }
        if self.walls.len() != self.width * self.height {
            return Err(SihdError::InvalidEnv(format!(
                "wall mask has {} cells, grid has {}",
                self.walls.len(),
                self.width * self.height
            )));
        }
        for (name, cell) in [("start", self.start), ("goal", self.goal)] {
            if !self.is_free(cell) {
                return Err(SihdError::InvalidEnv(format!(
                    "{name} {cell:?} is a wall or off the grid"
                )));
            }
        }
        if self.start == self.goal {
            return Err(SihdError::InvalidEnv("start equals goal".into()));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(SihdError::InvalidEnv(format!(
                "jitter {} outside [0, 0.5)",
                self.jitter
            )));
        }
        if !self.goal_reward.is_finite() {
            return Err(SihdError::InvalidEnv("non-finite goal reward".into()));
        }
        if self.max_steps == 0 {
            return Err(SihdError::InvalidEnv("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn is_free(&self, (x, y): Cell) -> bool {
        x < self.width && y < self.height && !self.walls[y * self.width + x]
    }

    /// Cell reached by one unit move, or the same cell if blocked.
    pub fn apply(&self, cell: Cell, action: &[f64]) -> Cell {
        let (ax, ay) = (action[0], action[1]);
        if !(ax.is_finite() && ay.is_finite()) || ax.abs().max(ay.abs()) < 0.5 {
            return cell;
        }
        let (dx, dy): (i64, i64) = if ax.abs() >= ay.abs() {
            (ax.signum() as i64, 0)
        } else {
            (0, ay.signum() as i64)
        };
        let nx = cell.0 as i64 + dx;
        let ny = cell.1 as i64 + dy;
        if nx < 0 || ny < 0 {
            return cell;
        }
        let next = (nx as usize, ny as usize);
        if self.is_free(next) {
            next
        } else {
            cell
        }
    }

    pub fn step(&self, cell: Cell, action: &[f64]) -> StepOutcome {
        let next = self.apply(cell, action);
        let done = next == self.goal;
        StepOutcome {
            cell: next,
            reward: if done { self.goal_reward } else { 0.0 },
            done,
        }
    }

    pub fn cell_center(&self, (x, y): Cell) -> [f64; 2] {
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    /// Jittered observation of a cell.
    pub fn observe<R: Rng + ?Sized>(&self, cell: Cell, rng: &mut R) -> Vec<f64> {
        let [cx, cy] = self.cell_center(cell);
        if self.jitter == 0.0 {
            return vec![cx, cy];
        }
        vec![
            cx + rng.random_range(-self.jitter..=self.jitter),
            cy + rng.random_range(-self.jitter..=self.jitter),
        ]
    }

    /// Cell containing a continuous position, clamped to the grid.
    pub fn cell_of(&self, state: &[f64]) -> Cell {
        let clamp = |v: f64, n: usize| -> usize {
            if !v.is_finite() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        (clamp(state[0], self.width), clamp(state[1], self.height))
    }

    /// BFS distance from every cell to the goal; `None` for walls and unreachable cells.
    pub fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.width * self.height];
        let mut queue = VecDeque::new();
        dist[self.goal.1 * self.width + self.goal.0] = Some(0);
        queue.push_back(self.goal);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.1 * self.width + cell.0].unwrap_or(0);
            for a in ACTIONS {
                let next = self.apply(cell, &a);
                let idx = next.1 * self.width + next.0;
                if next != cell && dist[idx].is_none() {
                    dist[idx] = Some(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    pub fn shortest_path_len(&self) -> Option<usize> {
        self.distances_to_goal()[self.start.1 * self.width + self.start.0]
    }

    /// First action (in [`ACTIONS`] order) that moves one step closer to the goal.
    pub fn greedy_action(&self, cell: Cell, dist: &[Option<usize>]) -> Option<[f64; 2]> {
        let here = dist[cell.1 * self.width + cell.0]?;
        ACTIONS.into_iter().find(|a| {
            let next = self.apply(cell, a);
            next != cell && dist[next.1 * self.width + next.0] == Some(here.wrapping_sub(1))
        })
    }

    /// Execute actions from `start` until the goal is reached or actions run out.
    pub fn execute(&self, start: Cell, actions: &[Vec<f64>]) -> EpisodeResult {
        let mut cell = start;
        let mut cells = vec![cell];
        let mut total = 0.0;
        for (t, a) in actions.iter().enumerate() {
            let out = self.step(cell, a);
            cell = out.cell;
            cells.push(cell);
            total += out.reward;
            if out.done {
                return EpisodeResult {
                    reached: true,
                    cumulative_reward: total,
                    steps: t + 1,
                    cells,
                };
            }
        }
        EpisodeResult {
            reached: false,
            cumulative_reward: total,
            steps: actions.len(),
            cells,
        }
    }

    /// Roll out the epsilon-noisy shortest-path walker for one episode.
    pub fn collect_episode<R: Rng + ?Sized>(
        &self,
        noise: f64,
        dist: &[Option<usize>],
        rng: &mut R,
    ) -> Result<Trajectory> {
        let mut cell = self.start;
        let mut states = vec![self.observe(cell, rng)];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..self.max_steps {
            let action = if noise > 0.0 && rng.random::<f64>() < noise {
                ACTIONS[rng.random_range(0..ACTIONS.len())]
            } else {
                self.greedy_action(cell, dist).ok_or(SihdError::UnreachableGoal)?
            };
            let out = self.step(cell, &action);
            cell = out.cell;
            actions.push(action.to_vec());
            rewards.push(out.reward);
            states.push(self.observe(cell, rng));
            if out.done {
                break;
            }
        }
        // terminal placeholder
        actions.push(vec![0.0, 0.0]);
        rewards.push(0.0);
        Trajectory::new(states, actions, rewards)
    }
}

/// Synthesize an offline dataset from the noisy shortest-path walker.
///
/// With probability `noise` each step takes a uniformly random unit move,
/// otherwise the greedy shortest-path move. Pure function of its arguments.
pub fn synthesize_dataset(env: &MazeEnv, n_episodes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    env.validate()?;
    if n_episodes == 0 {
        return Err(SihdError::InvalidArgument("n_episodes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(SihdError::InvalidArgument(format!("noise {noise} outside [0, 1]")));
    }
    let dist = env.distances_to_goal();
    if dist[env.start.1 * env.width + env.start.0].is_none() {
        return Err(SihdError::UnreachableGoal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..n_episodes)
        .map(|_| env.collect_episode(noise, &dist, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories)
}

/// Uniformly random unit moves; the baseline for normalized scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl RandomPolicy {
    pub fn actions<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..horizon)
            .map(|_| ACTIONS[rng.random_range(0..ACTIONS.len())].to_vec())
            .collect()
    }
}
