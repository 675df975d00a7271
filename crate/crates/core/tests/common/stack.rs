//! A small trained stack on the built-in maze, for tests that need one.

use sihd_core::dataset::{synthesize_dataset, Dataset, MazeEnv};
use rand::Rng;
use sihd_core::diffusion::{Denoiser, DiffusionStack, LayerSamples, NetShape, TrainConfig, TrainExample};
use sihd_core::encoding_tree::hcse_optimize;
use sihd_core::pipeline::{build_graph, train_from_artifacts, TreeArtifact};
use sihd_core::state_graph::Similarity;

use super::{normal_vec, rng};

pub fn tiny_setup() -> (Dataset, TreeArtifact) {
    let env = MazeEnv::default_maze();
    let data = synthesize_dataset(&env, 20, 0.3, 5).unwrap();
    let (_, g) = build_graph(&data, 0.3, (2, 8), Similarity::Rbf).unwrap();
    let tree = hcse_optimize(&g, 3).unwrap();
    let art = TreeArtifact::from_file(&tree.to_file(Some(&g)).unwrap()).unwrap();
    (data, art)
}

pub fn tiny_config(eta: f64) -> TrainConfig {
    TrainConfig {
        hidden: 16,
        pad_lens: vec![8, 6, 8],
        steps: 60,
        batch_size: 8,
        eta,
        refresh_every: 20,
        kde_samples: 4,
        diffusion_steps: 5,
        seed: 3,
        ..TrainConfig::default()
    }
}

pub fn tiny_stack() -> (DiffusionStack, TreeArtifact) {
    let (data, art) = tiny_setup();
    let (stack, _) = train_from_artifacts(&data, &art, &tiny_config(0.0), [0; 32]).unwrap();
    (stack, art)
}

pub fn small_net(seed: u64) -> Denoiser {
    let shape = NetShape {
        slots: 2,
        features: 2,
        hidden: 8,
    };
    Denoiser::new(1, shape, &mut rng(seed)).unwrap()
}

pub fn random_batch(net: &Denoiser, n: usize, r: &mut impl Rng) -> Vec<TrainExample> {
    let len = net.shape.seq_len();
    (0..n)
        .map(|i| TrainExample {
            noised: normal_vec(len, r),
            noise: normal_vec(len, r),
            step: r.random_range(1..=20),
            y: r.random_range(-1.0..1.0),
            blend: if i % 3 == 0 { 1.0 } else { 0.1 },
            weight: r.random_range(0.5..1.5),
            fixed: if i % 2 == 0 { vec![0] } else { Vec::new() },
        })
        .collect()
}

pub fn one_segment() -> LayerSamples {
    // each feature spans exactly [-1, 1], so scaling is the identity
    LayerSamples {
        layer: 2,
        slots: 4,
        features: 2,
        state_dim: 2,
        pin_terminal: false,
        rows: vec![vec![vec![-1.0, 1.0], vec![-0.3, 0.2], vec![0.4, -0.5], vec![1.0, -1.0]]],
        conds: vec![0.5],
        vertices: vec![vec![0, 0, 0, 0]],
    }
}

pub fn overfit_config(steps: usize) -> TrainConfig {
    TrainConfig {
        hidden: 64,
        steps,
        batch_size: 32,
        learning_rate: 3e-3,
        eta: 0.0,
        ..TrainConfig::default()
    }
}
