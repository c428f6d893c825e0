//! Group rollouts consumed by the objective, and the flat (non-tree)
//! group samplers used by the baseline variants.

use serde::Serialize;

use super::tree::{TrajectoryTree, TreeId};
use crate::error::Result;
use crate::flow::{ode_step, sde_step, SdeConfig, TimeGrid, Transition};
use crate::nnet::VelocityModel;
use crate::rng::NoiseStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafPath {
    /// Stochastic transitions the objective is evaluated on.
    pub transitions: Vec<Transition>,
    pub endpoint: Vec<f64>,
}

/// One group of samples for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRollout {
    pub class: usize,
    pub sde: SdeConfig,
    pub leaves: Vec<LeafPath>,
    /// Old-policy evaluations spent producing the group.
    pub nfe: u64,
    pub tree: Option<TrajectoryTree>,
}

impl GroupRollout {
    pub fn size(&self) -> usize {
        self.leaves.len()
    }

    pub fn endpoints(&self) -> Vec<Vec<f64>> {
        self.leaves.iter().map(|l| l.endpoint.clone()).collect()
    }

    /// Mean pairwise Euclidean distance between leaf endpoints.
    pub fn dispersion(&self) -> f64 {
        pairwise_dispersion(&self.endpoints())
    }
}

pub fn pairwise_dispersion(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// `group_size` independent trajectories from one shared initial noise,
/// stochastic on grid steps in `sde_steps` and deterministic elsewhere.
/// Each trajectory is simulated end to end, so the cost is `G T`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_independent<M: VelocityModel + ?Sized>(
    field_old: &M,
    class: usize,
    grid: &TimeGrid,
    cfg: &SdeConfig,
    streams: &NoiseStream,
    id: TreeId,
    group_size: usize,
    sde_steps: std::ops::Range<usize>,
) -> Result<GroupRollout> {
    let dim = field_old.state_dim();
    let dt = grid.dt();
    let x0 = streams.normal(&id.initial_key(), dim);
    let leaves = (0..group_size)
        .map(|i| {
            let mut x = x0.clone();
            let mut transitions = Vec::with_capacity(sde_steps.len());
            for step in 0..grid.steps {
                let t = grid.t(step);
                if sde_steps.contains(&step) {
                    let eps = streams.normal(&id.key(i as u64, step + 1), dim);
                    let out = sde_step(field_old, &x, t, dt, 1, &eps, class, cfg)?;
                    let lp = out.logprob()?;
                    transitions.push(Transition {
                        x_from: x,
                        x_to: out.x_next.clone(),
                        t,
                        dt,
                        layer_k: 1,
                        noise: Some(eps),
                        logprob_old: lp,
                    });
                    x = out.x_next;
                } else {
                    x = ode_step(field_old, &x, t, dt, class)?;
                }
            }
            Ok(LeafPath {
                transitions,
                endpoint: x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupRollout {
        class,
        sde: *cfg,
        leaves,
        nfe: (group_size * grid.steps) as u64,
        tree: None,
    })
}
