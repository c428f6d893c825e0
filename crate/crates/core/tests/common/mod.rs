#![allow(dead_code)]

use treerpo_core::flow::{SdeConfig, TimeGrid};
use treerpo_core::nnet::{MlpConfig, ParamVector, VelocityField};
use treerpo_core::oracle::{finite_diff_grad, max_rel_error};
use treerpo_core::rlcore::GroupBatch;
use treerpo_core::rng::{seeded, NoiseStream};
use treerpo_core::toy::ToyTask;
use treerpo_core::treesampler::{rollout_tree, TreeId, WindowSchedule, WrapMode};
use treerpo_core::Result;

use rand::Rng;

/// Probe step for gradient checks. Losses are evaluated in f64, so the
/// step only needs to keep the O(h^2) truncation term small.
pub const FD_STEP: f64 = 1.0 / 16384.0;
pub const FD_TOL: f64 = 1e-4;

pub fn small_config(hidden: Vec<usize>) -> MlpConfig {
    MlpConfig {
        hidden_dims: hidden,
        time_features: 4,
        ..MlpConfig::default()
    }
}

/// `field` with every weight nudged by uniform noise of size `scale`.
pub fn perturbed(field: &VelocityField, scale: f64, seed: u64) -> VelocityField {
    let mut rng = seeded(seed, 77);
    let mut out = field.clone();
    for v in out.params_mut().values_mut() {
        *v += (scale * (2.0 * rng.gen::<f64>() - 1.0)) as f32;
    }
    out
}

pub fn with_params(field: &VelocityField, p: &ParamVector) -> VelocityField {
    VelocityField::from_params(field.config().clone(), p.clone(), field.init_seed()).unwrap()
}

pub fn tree_batch(field_old: &VelocityField, depth: usize, tau: usize, seed: u64, class: usize) -> GroupBatch {
    let grid = TimeGrid::new(25, 1e-3).unwrap();
    let sde = SdeConfig {
        depth,
        ..SdeConfig::default()
    };
    let mut sched = WindowSchedule::new(25, depth, 1, 1, WrapMode::Cycle).unwrap();
    sched.tau = tau;
    let tree = rollout_tree(
        field_old,
        class,
        &sched,
        &grid,
        &sde,
        &NoiseStream::new(seed),
        TreeId {
            iteration: 0,
            prompt: 0,
            tree: 0,
        },
    )
    .unwrap();
    GroupBatch::new(tree.into_group().unwrap(), &ToyTask::default(), [1.0; 3]).unwrap()
}

/// Relative error of `analytic` against central differences of `loss`,
/// with near-zero entries measured against a floor tied to the gradient's
/// overall scale.
pub fn fd_rel_error<F>(loss: F, params: &ParamVector, analytic: &[f64]) -> f64
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let numeric = finite_diff_grad(loss, params, FD_STEP).unwrap();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    max_rel_error(analytic, &numeric, 1e-3 * scale)
}
