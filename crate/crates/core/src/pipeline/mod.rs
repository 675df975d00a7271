//! Configuration, stage functions and the end-to-end driver.
//!
//! `run_pipeline` executes `synth → graph → partition → segment → train →
//! plan → eval` inside a work directory. Each stage records a key (hash of
//! the config and its input artifacts) and the SHA-256 of every artifact it
//! wrote in `manifest.json`; a stage is skipped when its key matches and its
//! artifacts are intact.

pub mod config;
pub mod eval;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_dataset, save_dataset, synthesize_dataset, Dataset, MazeEnv};
use crate::diffusion::{load_stack, save_stack, train_stack, DiffusionStack, GainTable, TrainConfig, TrainLog};
use crate::encoding_tree::{hcse_optimize, EncodingTree, TreeFile, TreeStats};
use crate::error::{Result, SihdError};
use crate::planner::{PlanOutput, Planner, SubgoalCriterion};
use crate::segmentation::{build_hierarchy, SegmentHierarchy, SegmentsFile};
use crate::state_graph::{dedupe_states, nearest_vertex, select_k, Similarity, StateGraph};

pub use config::{stage_seed, Config};
pub use eval::{evaluate, greedy_actions, mean_std, normalized_score, EvalReport, EvalSettings, MeanStd, PolicySummary, SeedReport};

/// A tree together with the vertex coordinates and statistics it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeArtifact {
    pub tree: EncodingTree,
    pub vertices: Vec<Vec<f64>>,
    pub stats: TreeStats,
    pub gains: GainTable,
}

impl TreeArtifact {
    pub fn from_file(file: &TreeFile) -> Result<Self> {
        let tree = EncodingTree::from_file(file)?;
        let vertices = file
            .vertices
            .clone()
            .ok_or_else(|| SihdError::Precondition("tree file carries no vertex coordinates".into()))?;
        let stats = file
            .stats()
            .ok_or_else(|| SihdError::Precondition("tree file carries no volumes and cuts".into()))?;
        let gains = GainTable::new(&tree, &stats)?;
        Ok(TreeArtifact {
            tree,
            vertices,
            stats,
            gains,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SihdError::MissingArtifact(path.to_path_buf()));
        }
        Self::from_file(&TreeFile::load(path)?)
    }
}

/// Deduplicate the dataset's states and pick the k-NN graph of maximal
/// one-dimensional entropy; the upper end of the k range is clamped to
/// `|S| - 1`.
pub fn build_graph(dataset: &Dataset, dedup_tol: f64, k_range: (usize, usize), similarity: Similarity) -> Result<(usize, StateGraph)> {
    let deduped = dedupe_states(dataset, dedup_tol);
    let n = deduped.vertices.len();
    if n < 2 {
        return Err(SihdError::EmptyGraph);
    }
    let hi = k_range.1.min(n - 1);
    let lo = k_range.0.min(hi);
    select_k(&deduped.vertices, (lo, hi), similarity)
}

/// Nearest vertex of every state of every trajectory.
pub fn vertex_ids(dataset: &Dataset, vertices: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    dataset
        .trajectories
        .iter()
        .map(|t| {
            t.states
                .iter()
                .map(|s| nearest_vertex(vertices, s).ok_or(SihdError::EmptyGraph))
                .collect()
        })
        .collect()
}

pub fn hierarchies(ids: &[Vec<usize>], tree: &EncodingTree) -> Result<Vec<SegmentHierarchy>> {
    ids.iter().map(|v| build_hierarchy(v, tree)).collect()
}

/// Train a stack on a dataset against a saved tree artifact.
pub fn train_from_artifacts(
    dataset: &Dataset,
    tree: &TreeArtifact,
    cfg: &TrainConfig,
    config_hash: [u8; 32],
) -> Result<(DiffusionStack, TrainLog)> {
    let ids = vertex_ids(dataset, &tree.vertices)?;
    let hier = hierarchies(&ids, &tree.tree)?;
    train_stack(dataset, &ids, &tree.vertices, &tree.tree, &tree.gains, &hier, cfg, config_hash)
}

/// Saved output of a single planning call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub seed: u64,
    pub horizon: usize,
    pub start: Vec<f64>,
    #[serde(flatten)]
    pub plan: PlanOutput,
}

/// Plan from a jittered observation of the environment's start cell.
pub fn plan_episode(
    stack: &DiffusionStack,
    tree: &TreeArtifact,
    env: &MazeEnv,
    criterion: SubgoalCriterion,
    horizon: usize,
    seed: u64,
) -> Result<PlanFile> {
    let planner = Planner::new(stack, &tree.tree, &tree.vertices, &tree.gains, criterion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = env.observe(env.start, &mut rng);
    let plan = planner.plan(&start, horizon, &mut rng)?;
    Ok(PlanFile {
        seed,
        horizon,
        start,
        plan,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SihdError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SihdError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| SihdError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SihdError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    /// Artifact path relative to the work directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// What `run_pipeline` did.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

pub const STAGES: [&str; 7] = ["synth", "graph", "partition", "segment", "train", "plan", "eval"];

fn outputs(stage: &str, cfg: &Config) -> Vec<String> {
    match stage {
        "synth" => vec!["dataset.jsonl".into(), "env.json".into()],
        "graph" => vec!["graph.json".into()],
        "partition" => vec!["tree.json".into()],
        "segment" => vec!["segments.json".into()],
        "train" => vec!["model.bin".into(), "train_log.json".into()],
        "plan" => vec!["plan.json".into()],
        "eval" => {
            let seeds = if cfg.eval_episodes == 0 { 0 } else { cfg.eval_seeds };
            let mut v: Vec<String> = (0..seeds).map(|i| format!("eval/seed_{i}.json")).collect();
            v.push("report.json".into());
            v
        }
        _ => unreachable!("unknown stage {stage}"),
    }
}

fn inputs(stage: &str) -> &'static [&'static str] {
    match stage {
        "synth" => &[],
        "graph" => &["dataset.jsonl"],
        "partition" => &["graph.json"],
        "segment" | "train" => &["dataset.jsonl", "tree.json"],
        _ => &["model.bin", "tree.json", "env.json"],
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    dir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn run_stage(&self, stage: &str) -> Result<()> {
        let cfg = self.cfg;
        match stage {
            "synth" => {
                let env = cfg.env()?;
                let data = synthesize_dataset(&env, cfg.episodes, cfg.collector_noise, stage_seed(cfg.seed, "synth"))?;
                save_dataset(&data, self.path("dataset.jsonl"))?;
                write_json(&env, self.path("env.json"))
            }
            "graph" => {
                let data = load_dataset(self.path("dataset.jsonl"))?;
                let (k, graph) = build_graph(&data, cfg.dedup_tol, (cfg.k_min, cfg.k_max), cfg.similarity)?;
                log::info!("graph: {} vertices, {} edges, k = {k}", graph.n_vertices(), graph.edge_count());
                graph.save(self.path("graph.json"), Some(k))
            }
            "partition" => {
                let graph = StateGraph::load(self.path("graph.json"))?;
                let tree = hcse_optimize(&graph, cfg.tree_height)?;
                log::info!("tree: height {}, {} nodes", tree.height(), tree.n_nodes());
                tree.to_file(Some(&graph))?.save(self.path("tree.json"))
            }
            "segment" => {
                let data = load_dataset(self.path("dataset.jsonl"))?;
                let art = TreeArtifact::load(self.path("tree.json"))?;
                let ids = vertex_ids(&data, &art.vertices)?;
                let hier = hierarchies(&ids, &art.tree)?;
                write_json(&SegmentsFile::from_hierarchies(art.tree.height(), &hier), self.path("segments.json"))
            }
            "train" => {
                let data = load_dataset(self.path("dataset.jsonl"))?;
                let art = TreeArtifact::load(self.path("tree.json"))?;
                let (stack, log) = train_from_artifacts(&data, &art, &cfg.train_config(), cfg.hash())?;
                save_stack(&stack, self.path("model.bin"))?;
                write_json(&log, self.path("train_log.json"))
            }
            "plan" => {
                let (stack, art, env) = self.trained()?;
                let plan = plan_episode(
                    &stack,
                    &art,
                    &env,
                    SubgoalCriterion::new(cfg.goal_tolerance)?,
                    cfg.horizon,
                    stage_seed(cfg.seed, "plan"),
                )?;
                write_json(&plan, self.path("plan.json"))
            }
            "eval" => {
                let (stack, art, env) = self.trained()?;
                let report = evaluate(
                    &stack,
                    &art,
                    &env,
                    SubgoalCriterion::new(cfg.goal_tolerance)?,
                    EvalSettings {
                        horizon: cfg.horizon,
                        episodes_per_seed: cfg.eval_episodes,
                        seeds: cfg.eval_seeds,
                        closed_loop: cfg.closed_loop,
                        root_seed: cfg.seed,
                    },
                    &cfg.hash_hex(),
                )?;
                let dir = self.path("eval");
                fs::create_dir_all(&dir).map_err(|e| SihdError::io(&dir, e))?;
                for s in &report.per_seed {
                    write_json(s, dir.join(format!("seed_{}.json", s.seed_index)))?;
                }
                write_json(&report, self.path("report.json"))
            }
            _ => unreachable!("unknown stage {stage}"),
        }
    }

    fn trained(&self) -> Result<(DiffusionStack, TreeArtifact, MazeEnv)> {
        let model = self.path("model.bin");
        if !model.exists() {
            return Err(SihdError::MissingArtifact(model));
        }
        let stack = load_stack(model)?;
        let art = TreeArtifact::load(self.path("tree.json"))?;
        let env: MazeEnv = read_json(self.path("env.json"))?;
        Ok((stack, art, env))
    }
}

fn stage_key(cfg_hash: &str, stage: &str, dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(cfg_hash.as_bytes());
    h.update(stage.as_bytes());
    for rel in inputs(stage) {
        let p = dir.join(rel);
        if !p.exists() {
            return Err(SihdError::MissingArtifact(p));
        }
        h.update(rel.as_bytes());
        h.update(file_sha256(&p)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn intact(dir: &Path, record: &StageRecord) -> bool {
    record
        .artifacts
        .iter()
        .all(|(rel, hash)| file_sha256(dir.join(rel)).is_ok_and(|h| &h == hash))
}

/// Run (or resume) every stage in `workdir`.
pub fn run_pipeline(cfg: &Config, workdir: impl AsRef<Path>) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = workdir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SihdError::io(dir, e))?;
    let manifest_path = dir.join("manifest.json");
    let previous: Option<Manifest> = read_json(&manifest_path).ok();
    let cfg_hash = cfg.hash_hex();
    let ctx = Ctx { cfg, dir };
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg_hash.clone(),
        seed: cfg.seed,
        stages: Vec::new(),
    };
    let (mut executed, mut skipped) = (Vec::new(), Vec::new());
    for stage in STAGES {
        let wrap = |e: SihdError| SihdError::Stage {
            stage: stage.to_string(),
            path: dir.join(outputs(stage, cfg).first().map_or("", String::as_str)),
            source: Box::new(e),
        };
        let key = stage_key(&cfg_hash, stage, dir).map_err(wrap)?;
        let reusable = previous
            .as_ref()
            .and_then(|m| m.stage(stage))
            .filter(|r| r.key == key && intact(dir, r));
        let record = match reusable {
            Some(r) => {
                log::info!("stage {stage}: up to date, skipped");
                skipped.push(stage.to_string());
                r.clone()
            }
            None => {
                log::info!("stage {stage}: running");
                ctx.run_stage(stage).map_err(wrap)?;
                executed.push(stage.to_string());
                let artifacts = outputs(stage, cfg)
                    .into_iter()
                    .map(|rel| Ok((rel.clone(), file_sha256(dir.join(&rel))?)))
                    .collect::<Result<BTreeMap<_, _>>>()
                    .map_err(wrap)?;
                StageRecord {
                    name: stage.to_string(),
                    key,
                    artifacts,
                }
            }
        };
        manifest.stages.push(record);
        write_json(&manifest, &manifest_path)?;
    }
    let report = read_json(dir.join("report.json"))?;
    Ok(PipelineOutcome {
        report,
        executed,
        skipped,
    })
}
