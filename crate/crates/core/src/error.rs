use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SihdError>;

#[derive(Debug, Error)]
pub enum SihdError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("goal is unreachable from start")]
    UnreachableGoal,
    #[error("degenerate similarity: {0}")]
    DegenerateSimilarity(String),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("operation not defined on the root node")]
    RootNode,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("height {height} out of range 1..{max}")]
    HeightOutOfRange { height: usize, max: usize },
    #[error("vertex set mismatch: tree has {tree} vertices, graph has {graph}")]
    VertexMismatch { tree: usize, graph: usize },
    #[error("state at timestep {0} is not mapped to a vertex")]
    UnmappedState(usize),
    #[error("sequence of length {len} exceeds target length {target}")]
    Overflow { len: usize, target: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model is untrained")]
    Untrained,
    #[error("unresolved community: {0}")]
    UnresolvedCommunity(String),
    #[error("no training data: {0}")]
    EmptyHierarchy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("stage `{stage}` failed on {path}: {source}")]
    Stage {
        stage: String,
        path: PathBuf,
        #[source]
        source: Box<SihdError>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SihdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SihdError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failing stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SihdError::Config(_)
                | SihdError::InvalidArgument(_)
                | SihdError::InvalidEnv(_)
                | SihdError::Parse { .. }
                | SihdError::DimensionMismatch(_)
                | SihdError::EmptyDataset
                | SihdError::InvalidTrajectory(_)
        )
    }
}
