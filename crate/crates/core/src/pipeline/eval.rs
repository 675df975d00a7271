//! Environment rollouts of the planner and its baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::stage_seed;
use super::TreeArtifact;
use crate::dataset::{EpisodeResult, MazeEnv, RandomPolicy};
use crate::diffusion::DiffusionStack;
use crate::error::Result;
use crate::planner::{is_satisfied, Planner, SubgoalCriterion};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub horizon: usize,
    pub episodes_per_seed: usize,
    pub seeds: usize,
    pub closed_loop: bool,
    pub root_seed: u64,
}

/// Aggregate outcome of one policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicySummary {
    pub goal_reach_rate: f64,
    pub mean_cumulative_reward: f64,
    pub mean_episode_length: f64,
}

impl PolicySummary {
    fn from_results(results: &[EpisodeResult]) -> Self {
        if results.is_empty() {
            return PolicySummary::default();
        }
        let n = results.len() as f64;
        PolicySummary {
            goal_reach_rate: results.iter().filter(|r| r.reached).count() as f64 / n,
            mean_cumulative_reward: results.iter().map(|r| r.cumulative_reward).sum::<f64>() / n,
            mean_episode_length: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed_index: usize,
    pub seed: u64,
    pub episodes: usize,
    pub planner: PolicySummary,
    pub random: PolicySummary,
    pub greedy: PolicySummary,
    pub normalized_score: Option<f64>,
    pub fallbacks: usize,
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub episodes: usize,
    pub zero_episodes: bool,
    pub closed_loop: bool,
    pub horizon: usize,
    pub goal_reach_rate: f64,
    pub mean_cumulative_reward: f64,
    pub mean_episode_length: f64,
    /// `100·(score - random)/(greedy - random)` on mean cumulative reward.
    pub normalized_score: Option<f64>,
    pub random: PolicySummary,
    pub greedy: PolicySummary,
    pub reach_rate_over_seeds: Option<MeanStd>,
    pub normalized_score_over_seeds: Option<MeanStd>,
    pub per_seed: Vec<SeedReport>,
}

/// `100·(score - random)/(expert - random)`; `None` when the anchors coincide.
pub fn normalized_score(score: f64, random: f64, expert: f64) -> Option<f64> {
    let span = expert - random;
    if span.abs() < 1e-12 {
        None
    } else {
        Some(100.0 * (score - random) / span)
    }
}

/// Shortest-path collector actions from `env.start`, truncated to `horizon`.
pub fn greedy_actions(env: &MazeEnv, horizon: usize) -> Vec<Vec<f64>> {
    let dist = env.distances_to_goal();
    let mut cell = env.start;
    let mut out = Vec::new();
    while out.len() < horizon && cell != env.goal {
        let Some(a) = env.greedy_action(cell, &dist) else { break };
        cell = env.apply(cell, &a);
        out.push(a.to_vec());
    }
    out
}

fn planner_episode(
    planner: &Planner<'_>,
    env: &MazeEnv,
    horizon: usize,
    closed_loop: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(EpisodeResult, usize)> {
    let s0 = env.observe(env.start, rng);
    if !closed_loop {
        let plan = planner.plan(&s0, horizon, rng)?;
        return Ok((env.execute(env.start, &plan.actions), plan.fallbacks));
    }
    let c = planner.criterion;
    let mut satisfied = |_: usize, _: usize, s: &[f64], g: &[f64]| is_satisfied(s, g, &c).unwrap_or(false);
    let mut st = planner.start(&s0, horizon)?;
    let mut cell = env.start;
    let mut cells = vec![cell];
    let mut total = 0.0;
    for t in 0..horizon {
        planner.step(&mut st, rng, &mut satisfied)?;
        let action = st.actions[st.actions.len() - 2].clone().expect("filled by step");
        let out = env.step(cell, &action);
        cell = out.cell;
        cells.push(cell);
        total += out.reward;
        if out.done {
            let result = EpisodeResult {
                reached: true,
                cumulative_reward: total,
                steps: t + 1,
                cells,
            };
            return Ok((result, st.fallbacks));
        }
        *st.states.last_mut().expect("non-empty") = env.observe(cell, rng);
    }
    let result = EpisodeResult {
        reached: false,
        cumulative_reward: total,
        steps: horizon,
        cells,
    };
    Ok((result, st.fallbacks))
}

/// Run every seed's planner, random and greedy episodes and aggregate.
pub fn evaluate(
    stack: &DiffusionStack,
    tree: &TreeArtifact,
    env: &MazeEnv,
    criterion: SubgoalCriterion,
    settings: EvalSettings,
    config_hash: &str,
) -> Result<EvalReport> {
    let planner = Planner::new(stack, &tree.tree, &tree.vertices, &tree.gains, criterion)?;
    let greedy = env.execute(env.start, &greedy_actions(env, settings.horizon));
    let mut per_seed = Vec::new();
    let (mut all_p, mut all_r) = (Vec::new(), Vec::new());
    if settings.episodes_per_seed > 0 {
        for i in 0..settings.seeds {
            let seed = stage_seed(settings.root_seed, &format!("eval-{i}"));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "random"));
            let (mut p, mut r) = (Vec::new(), Vec::new());
            let mut fallbacks = 0;
            for _ in 0..settings.episodes_per_seed {
                let (res, fb) = planner_episode(&planner, env, settings.horizon, settings.closed_loop, &mut rng)?;
                fallbacks += fb;
                p.push(res);
                r.push(env.execute(env.start, &RandomPolicy.actions(settings.horizon, &mut rand_rng)));
            }
            let ps = PolicySummary::from_results(&p);
            let rs = PolicySummary::from_results(&r);
            let gs = PolicySummary::from_results(std::slice::from_ref(&greedy));
            per_seed.push(SeedReport {
                seed_index: i,
                seed,
                episodes: p.len(),
                planner: ps,
                random: rs,
                greedy: gs,
                normalized_score: normalized_score(
                    ps.mean_cumulative_reward,
                    rs.mean_cumulative_reward,
                    gs.mean_cumulative_reward,
                ),
                fallbacks,
            });
            all_p.extend(p);
            all_r.extend(r);
        }
    }
    let planner_sum = PolicySummary::from_results(&all_p);
    let random_sum = PolicySummary::from_results(&all_r);
    let greedy_sum = PolicySummary::from_results(std::slice::from_ref(&greedy));
    let episodes = all_p.len();
    let seed_scores: Vec<f64> = per_seed.iter().filter_map(|s| s.normalized_score).collect();
    let seed_rates: Vec<f64> = per_seed.iter().map(|s| s.planner.goal_reach_rate).collect();
    Ok(EvalReport {
        config_hash: config_hash.to_string(),
        episodes,
        zero_episodes: episodes == 0,
        closed_loop: settings.closed_loop,
        horizon: settings.horizon,
        goal_reach_rate: planner_sum.goal_reach_rate,
        mean_cumulative_reward: planner_sum.mean_cumulative_reward,
        mean_episode_length: planner_sum.mean_episode_length,
        normalized_score: if episodes == 0 {
            None
        } else {
            normalized_score(
                planner_sum.mean_cumulative_reward,
                random_sum.mean_cumulative_reward,
                greedy_sum.mean_cumulative_reward,
            )
        },
        random: random_sum,
        greedy: greedy_sum,
        reach_rate_over_seeds: mean_std(&seed_rates),
        normalized_score_over_seeds: if seed_scores.len() == per_seed.len() {
            mean_std(&seed_scores)
        } else {
            None
        },
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalized_score(0.2, 0.2, 1.0), Some(0.0));
        assert_eq!(normalized_score(1.0, 0.2, 1.0), Some(100.0));
        assert_eq!(normalized_score(0.5, 1.0, 1.0), None);
    }

    #[test]
    fn mean_std_sample() {
        let m = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn greedy_reaches_goal() {
        let env = MazeEnv::default_maze();
        let acts = greedy_actions(&env, 64);
        assert_eq!(Some(acts.len()), env.shortest_path_len());
        assert!(env.execute(env.start, &acts).reached);
    }
}
