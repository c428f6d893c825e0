use crate::error::Result;
use crate::rewards::{advantages, AdvantageSet, RewardReport, NUM_CHANNELS};
use crate::toy::ToyTask;
use crate::treesampler::GroupRollout;

/// A scored group ready for the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupBatch {
    pub rollout: GroupRollout,
    pub rewards: RewardReport,
    pub advantages: AdvantageSet,
    /// Leaf with the highest aggregate reward.
    pub best_leaf: usize,
}

impl GroupBatch {
    /// Scores the leaf endpoints. A single-leaf group has no relative signal
    /// and gets zero advantage.
    pub fn new(rollout: GroupRollout, task: &ToyTask, weights: [f64; NUM_CHANNELS]) -> Result<Self> {
        let rewards = RewardReport::score(task, &rollout.endpoints(), rollout.class, weights);
        let advantages = if rollout.size() < 2 {
            AdvantageSet {
                values: vec![0.0; rollout.size()],
                means: rewards.per_channel.first().map(|r| r.to_vec()).unwrap_or_default(),
                stds: vec![0.0; NUM_CHANNELS],
            }
        } else {
            let rows: Vec<Vec<f64>> = rewards.per_channel.iter().map(|r| r.to_vec()).collect();
            advantages(&rows, &weights)?
        };
        let best_leaf = rewards.best();
        Ok(Self {
            rollout,
            rewards,
            advantages,
            best_leaf,
        })
    }

    /// Replaces the advantages, e.g. to probe the objective in tests.
    pub fn with_advantages(mut self, values: Vec<f64>) -> Self {
        self.advantages.values = values;
        self
    }

    pub fn size(&self) -> usize {
        self.rollout.size()
    }

    /// Number of stochastic transitions per leaf.
    pub fn window_len(&self) -> usize {
        self.rollout.leaves.first().map_or(0, |l| l.transitions.len())
    }
}
