//! Shared fixtures for the criterion benchmarks.

use treerpo_core::flow::{SdeConfig, TimeGrid};
use treerpo_core::nnet::{MlpConfig, VelocityField};
use treerpo_core::rlcore::GroupBatch;
use treerpo_core::rng::NoiseStream;
use treerpo_core::toy::ToyTask;
use treerpo_core::treesampler::{rollout_tree, TreeId, WindowSchedule, WrapMode};

pub const STEPS: usize = 25;
pub const DEPTH: usize = 4;

pub fn field(seed: u64) -> VelocityField {
    VelocityField::new_random(MlpConfig::default(), seed).expect("default config is valid")
}

pub fn grid() -> TimeGrid {
    TimeGrid::new(STEPS, 1e-3).expect("valid grid")
}

pub fn window(tau: usize) -> WindowSchedule {
    let mut w = WindowSchedule::new(STEPS, DEPTH, 1, 1, WrapMode::Cycle).expect("valid window");
    w.tau = tau;
    w
}

pub fn tree_id(prompt: u64) -> TreeId {
    TreeId {
        iteration: 0,
        prompt,
        tree: 0,
    }
}

pub fn batch(field: &VelocityField, tau: usize) -> GroupBatch {
    let tree = rollout_tree(
        field,
        0,
        &window(tau),
        &grid(),
        &SdeConfig::default(),
        &NoiseStream::new(1),
        tree_id(0),
    )
    .expect("rollout");
    GroupBatch::new(tree.into_group().expect("group"), &ToyTask::default(), [1.0; 3]).expect("batch")
}
