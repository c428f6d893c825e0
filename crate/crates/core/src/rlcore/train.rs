//! One policy-optimization iteration: snapshot the old policy, roll out a
//! group per prompt, score, take one AdamW step on the fused objective.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::GroupBatch;
use super::clip::ClipConfig;
use super::loss::{fused_loss, FusedStats, FusionConfig};
use crate::error::{Error, Result};
use crate::flow::{SdeConfig, TimeGrid};
use crate::nnet::{optimizer_step, AdamState, AdamW, ParamVector, VelocityField, VelocityModel};
use crate::reduce::LossGrad;
use crate::rewards::NUM_CHANNELS;
use crate::rng::NoiseStream;
use crate::toy::ToyTask;
use crate::treesampler::{advance_window, rollout_independent, rollout_tree, GroupRollout, TreeId, WindowSchedule};

/// Sampling structure used to build each group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Shared-prefix tree with depth-scaled noise.
    DynamicTree,
    /// The same tree with the noise growth rate forced to zero.
    FlatTree,
    /// Independent trajectories, stochastic at every step.
    FullSde,
    /// Independent trajectories, stochastic only inside the window.
    WindowSde,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DynamicTree,
        Variant::FlatTree,
        Variant::FullSde,
        Variant::WindowSde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DynamicTree => "dynamic-tree",
            Variant::FlatTree => "flat-tree",
            Variant::FullSde => "full-sde",
            Variant::WindowSde => "window-sde",
        }
    }

    /// SDE settings actually used by this variant.
    pub fn sde_config(self, base: &SdeConfig) -> SdeConfig {
        match self {
            Variant::DynamicTree => *base,
            Variant::FlatTree | Variant::FullSde | Variant::WindowSde => SdeConfig { beta: 0.0, ..*base },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Everything an iteration needs besides the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RlSetup {
    pub variant: Variant,
    pub grid: TimeGrid,
    pub sde: SdeConfig,
    pub window: WindowSchedule,
    pub clip: ClipConfig,
    pub fusion: FusionConfig,
    pub optimizer: AdamW,
    pub prompts_per_iter: usize,
    pub trees_per_prompt: usize,
    pub reward_weights: [f64; NUM_CHANNELS],
    pub task: ToyTask,
    pub noise: NoiseStream,
}

impl RlSetup {
    pub fn group_size(&self) -> usize {
        1 << (self.window.depth - 1)
    }

    /// Class index of prompt slot `p`; classes are visited round-robin.
    pub fn prompt_class(&self, p: usize) -> usize {
        p % self.task.num_classes
    }

    /// Samples one group under `field_old`.
    pub fn rollout<M: VelocityModel + ?Sized>(
        &self,
        field_old: &M,
        class: usize,
        sched: &WindowSchedule,
        id: TreeId,
    ) -> Result<GroupRollout> {
        let sde = self.variant.sde_config(&self.sde);
        match self.variant {
            Variant::DynamicTree | Variant::FlatTree => {
                rollout_tree(field_old, class, sched, &self.grid, &sde, &self.noise, id)?.into_group()
            }
            Variant::FullSde => rollout_independent(
                field_old,
                class,
                &self.grid,
                &sde,
                &self.noise,
                id,
                self.group_size(),
                0..self.grid.steps,
            ),
            Variant::WindowSde => rollout_independent(
                field_old,
                class,
                &self.grid,
                &sde,
                &self.noise,
                id,
                self.group_size(),
                sched.window(),
            ),
        }
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub tau: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub loss_grpo: f64,
    pub loss_sft: f64,
    pub loss_total: f64,
    pub eps_mean: f64,
    pub clip_frac: f64,
    pub nfe_cum: u64,
    pub group_dispersion: f64,
}

pub const METRICS_HEADER: &str =
    "iter,tau,reward_mean,reward_std,loss_grpo,loss_sft,loss_total,eps_mean,clip_frac,nfe_cum,group_dispersion";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.tau,
            self.reward_mean,
            self.reward_std,
            self.loss_grpo,
            self.loss_sft,
            self.loss_total,
            self.eps_mean,
            self.clip_frac,
            self.nfe_cum,
            self.group_dispersion
        )
    }
}

/// Policy parameters plus optimizer state across iterations.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub field: VelocityField,
    pub opt: AdamState,
    pub nfe_cum: u64,
}

struct GroupOutcome {
    grad: LossGrad,
    stats: FusedStats,
    aggregates: Vec<f64>,
    dispersion: f64,
    nfe: u64,
}

impl Trainer {
    pub fn new(field: VelocityField) -> Self {
        let n = field.params().len();
        Self {
            field,
            opt: AdamState::new(n),
            nfe_cum: 0,
        }
    }

    /// Runs iteration `iteration` and returns its metrics row.
    pub fn train_iteration(&mut self, setup: &RlSetup, iteration: usize) -> Result<IterationMetrics> {
        let old = self.field.clone();
        let sched = advance_window(&setup.window, iteration);
        let jobs: Vec<(usize, usize)> = (0..setup.prompts_per_iter)
            .flat_map(|p| (0..setup.trees_per_prompt).map(move |t| (p, t)))
            .collect();
        let current = &self.field;
        let outcomes: Vec<GroupOutcome> = jobs
            .par_iter()
            .map(|&(p, tree)| {
                let class = setup.prompt_class(p);
                let id = TreeId {
                    iteration: iteration as u64,
                    prompt: p as u64,
                    tree: tree as u64,
                };
                let rollout = setup.rollout(&old, class, &sched, id)?;
                let nfe = rollout.nfe;
                let dispersion = rollout.dispersion();
                let batch = GroupBatch::new(rollout, &setup.task, setup.reward_weights)?;
                let (grad, stats) = fused_loss(current, &batch, &setup.clip, &setup.fusion)?;
                Ok(GroupOutcome {
                    grad,
                    stats,
                    aggregates: batch.rewards.aggregate,
                    dispersion,
                    nfe,
                })
            })
            .collect::<Result<_>>()?;

        let groups = outcomes.len() as f64;
        let mut total = LossGrad::zeros(self.field.params().len());
        let mut rewards = Vec::new();
        let (mut loss_grpo, mut loss_sft, mut eps_mean, mut clip_frac, mut dispersion) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for o in &outcomes {
            total.add_scaled(&o.grad, 1.0 / groups);
            rewards.extend_from_slice(&o.aggregates);
            loss_grpo += o.stats.loss_grpo / groups;
            loss_sft += o.stats.loss_sft / groups;
            eps_mean += o.stats.grpo.eps_mean / groups;
            clip_frac += o.stats.grpo.clip_frac / groups;
            dispersion += o.dispersion / groups;
            self.nfe_cum += o.nfe;
        }
        if !total.loss.is_finite() || total.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss {} at iteration {iteration} (tau {})",
                total.loss, sched.tau
            )));
        }
        let grads = ParamVector::from_f64(&total.grad, self.field.params().layout().to_vec())?;
        optimizer_step(self.field.params_mut(), &grads, &mut self.opt, &setup.optimizer)?;

        let n = rewards.len() as f64;
        let reward_mean = rewards.iter().sum::<f64>() / n;
        let reward_std = (rewards.iter().map(|r| (r - reward_mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(IterationMetrics {
            iter: iteration,
            tau: sched.tau,
            reward_mean,
            reward_std,
            loss_grpo,
            loss_sft,
            loss_total: total.loss,
            eps_mean,
            clip_frac,
            nfe_cum: self.nfe_cum,
            group_dispersion: dispersion,
        })
    }
}
