//! Structural-entropy hierarchies over offline state graphs and the
//! hierarchical conditional-diffusion planner built on top of them.
//!
//! The pipeline runs in stages:
//!
//! 1. [`dataset`]: trajectories, JSON-Lines IO and a toy maze for synthesizing data.
//! 2. [`state_graph`]: k-NN similarity graph over observed states with k chosen by
//!    maximal one-dimensional structural entropy.
//! 3. [`encoding_tree`]: encoding trees, structural entropy, and HCSE optimization.
//! 4. [`segmentation`]: nested per-layer trajectory segments and subgoals.
//! 5. [`diffusion`]: per-layer conditional diffusion models and their training.
//! 6. [`planner`]: the receding-horizon planning loop with recursive subgoal refresh.
//! 7. [`pipeline`]: configuration, evaluation and the end-to-end driver.

pub mod dataset;
pub mod diffusion;
pub mod encoding_tree;
pub mod error;
pub mod pipeline;
pub mod planner;
pub mod segmentation;
pub mod state_graph;

pub use error::{Result, SihdError};
