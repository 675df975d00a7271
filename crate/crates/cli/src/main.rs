use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sihd_core::dataset::{load_dataset, save_dataset, synthesize_dataset, MazeEnv};
use sihd_core::diffusion::{load_stack, save_stack};
use sihd_core::encoding_tree::hcse_optimize;
use sihd_core::pipeline::{
    build_graph, evaluate, file_sha256, hierarchies, plan_episode, read_json, run_pipeline, train_from_artifacts,
    vertex_ids, write_json, Config, EvalSettings, TreeArtifact,
};
use sihd_core::planner::SubgoalCriterion;
use sihd_core::segmentation::SegmentsFile;
use sihd_core::state_graph::{Similarity, StateGraph};
use sihd_core::SihdError;

#[derive(Parser)]
#[command(name = "sihd", version, about = "Hierarchical diffusion planning over structural-entropy encoding trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset from the maze.
    Synth(SynthArgs),
    /// Build the k-NN state graph of a dataset.
    Graph(GraphArgs),
    /// Optimize an encoding tree of bounded height.
    Partition(PartitionArgs),
    /// Segment every trajectory against a tree.
    Segment(SegmentArgs),
    /// Train the per-layer diffusion stack.
    Train(TrainArgs),
    /// Plan one episode from the environment's start.
    Plan(PlanArgs),
    /// Evaluate the planner against random and greedy baselines.
    Eval(EvalArgs),
    /// Run (or resume) every stage in a work directory.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Open grid size; ignored when --walls is given.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    grid: Option<Vec<usize>>,
    /// Text layout (`#` wall, `.` free, `S` start, `G` goal).
    #[arg(long)]
    walls: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Probability of a random action in the collector.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    #[arg(long, default_value_t = 64)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the environment (default: env.json next to --out).
    #[arg(long)]
    env_out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "rbf")]
    similarity: Similarity,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 16)]
    k_max: usize,
    #[arg(long, default_value_t = 0.3)]
    dedup_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 3)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 64)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    goal_tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    env: PathBuf,
    /// Episodes per seed.
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    horizon: usize,
    #[arg(long, default_value_t = 0.5)]
    goal_tolerance: f64,
    #[arg(long)]
    closed_loop: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    workdir: PathBuf,
}

/// Record what a single-stage run consumed and produced next to its output.
fn write_manifest(out: &Path, stage: &str, seed: Option<u64>, config_hash: Option<String>, inputs: &[&Path]) -> Result<()> {
    let hashes = |paths: &[&Path]| -> Result<serde_json::Map<String, serde_json::Value>> {
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), json!(file_sha256(p)?))))
            .collect()
    };
    let manifest = json!({
        "stage": stage,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config_hash": config_hash,
        "inputs": hashes(inputs)?,
        "outputs": hashes(&[out])?,
    });
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    write_json(&manifest, PathBuf::from(path))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let env = match (&a.walls, &a.grid) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut env = MazeEnv::from_text(&text, a.jitter, 1.0, a.max_steps)?;
            env.max_steps = a.max_steps;
            env
        }
        (None, Some(g)) => {
            let mut env = MazeEnv::open(g[0], g[1], a.jitter)?;
            env.max_steps = a.max_steps;
            env
        }
        (None, None) => {
            let mut env = MazeEnv::default_maze();
            env.jitter = a.jitter;
            env.max_steps = a.max_steps;
            env
        }
    };
    let data = synthesize_dataset(&env, a.episodes, a.noise, a.seed)?;
    save_dataset(&data, &a.out)?;
    let env_out = a
        .env_out
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new(".")).join("env.json"));
    write_json(&env, &env_out)?;
    log::info!("{} trajectories written to {}", data.len(), a.out.display());
    write_manifest(&a.out, "synth", Some(a.seed), None, &[])
}

fn graph(a: GraphArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let (k, graph) = build_graph(&data, a.dedup_tol, (a.k_min, a.k_max), a.similarity)?;
    log::info!("{} vertices, {} edges, k = {k}", graph.n_vertices(), graph.edge_count());
    graph.save(&a.out, Some(k))?;
    write_manifest(&a.out, "graph", None, None, &[&a.data])
}

fn partition(a: PartitionArgs) -> Result<()> {
    if a.height < 2 {
        return Err(SihdError::InvalidArgument(format!("height {} leaves no hierarchy", a.height)).into());
    }
    let graph = StateGraph::load(&a.graph)?;
    let tree = hcse_optimize(&graph, a.height)?;
    tree.to_file(Some(&graph))?.save(&a.out)?;
    write_manifest(&a.out, "partition", None, None, &[&a.graph])
}

fn segment(a: SegmentArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let art = TreeArtifact::load(&a.tree)?;
    let ids = vertex_ids(&data, &art.vertices)?;
    let hier = hierarchies(&ids, &art.tree)?;
    write_json(&SegmentsFile::from_hierarchies(art.tree.height(), &hier), &a.out)?;
    write_manifest(&a.out, "segment", None, None, &[&a.data, &a.tree])
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = Config::load(a.cfg.config.as_deref(), &a.cfg.set)?;
    let data = load_dataset(&a.data)?;
    let art = TreeArtifact::load(&a.tree)?;
    let (stack, log) = train_from_artifacts(&data, &art, &cfg.train_config(), cfg.hash())?;
    save_stack(&stack, &a.out)?;
    let mut log_path = a.out.as_os_str().to_owned();
    log_path.push(".log.json");
    write_json(&log, PathBuf::from(log_path))?;
    write_manifest(&a.out, "train", Some(cfg.seed), Some(cfg.hash_hex()), &[&a.data, &a.tree])
}

fn load_trained(model: &Path, tree: &Path, env: &Path) -> Result<(sihd_core::diffusion::DiffusionStack, TreeArtifact, MazeEnv)> {
    for p in [model, tree, env] {
        if !p.exists() {
            return Err(SihdError::MissingArtifact(p.to_path_buf()).into());
        }
    }
    Ok((load_stack(model)?, TreeArtifact::load(tree)?, read_json(env)?))
}

fn plan(a: PlanArgs) -> Result<()> {
    let (stack, art, env) = load_trained(&a.model, &a.tree, &a.env)?;
    let plan = plan_episode(&stack, &art, &env, SubgoalCriterion::new(a.goal_tolerance)?, a.horizon, a.seed)?;
    write_json(&plan, &a.out)?;
    write_manifest(&a.out, "plan", Some(a.seed), Some(hex_hash(&stack.config_hash)), &[&a.model, &a.tree, &a.env])
}

fn hex_hash(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let (stack, art, env) = load_trained(&a.model, &a.tree, &a.env)?;
    let settings = EvalSettings {
        horizon: a.horizon,
        episodes_per_seed: a.episodes,
        seeds: a.seeds,
        closed_loop: a.closed_loop,
        root_seed: a.seed,
    };
    let hash = hex_hash(&stack.config_hash);
    let report = evaluate(&stack, &art, &env, SubgoalCriterion::new(a.goal_tolerance)?, settings, &hash)?;
    write_json(&report, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    write_manifest(&a.out, "eval", Some(a.seed), Some(hash), &[&a.model, &a.tree, &a.env])
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = Config::load(a.cfg.config.as_deref(), &a.cfg.set)?;
    let outcome = run_pipeline(&cfg, &a.workdir)?;
    log::info!("executed {:?}, skipped {:?}", outcome.executed, outcome.skipped);
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Graph(a) => graph(a),
        Command::Partition(a) => partition(a),
        Command::Segment(a) => segment(a),
        Command::Train(a) => train(a),
        Command::Plan(a) => plan(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SihdError>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&SihdError::Config("x".into()).into()), 1);
        assert_eq!(exit_code(&SihdError::Untrained.into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn parses_repeated_sets() {
        let cli = Cli::try_parse_from(["sihd", "pipeline", "--workdir", "w", "--set", "eta=0", "--set", "omega=0.2"]).unwrap();
        let Command::Pipeline(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.cfg.set, vec!["eta=0", "omega=0.2"]);
    }
}
