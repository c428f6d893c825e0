//! Analytic reward channels for the toy task and multi-channel group
//! advantages.
//!
//! Channels, for a sample `x` and class mean `mu`:
//! 1. mode affinity `exp(-|x - mu|^2 / (2 * 0.25^2))`
//! 2. proximity `-|x - mu|^2`
//! 3. direction alignment `(1 + cos angle(x, mu)) / 2`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy::ToyTask;

pub const NUM_CHANNELS: usize = 3;
pub const AFFINITY_WIDTH: f64 = 0.25;
pub const STD_EPS: f64 = 1e-8;

pub fn reward_channels(task: &ToyTask, x: &[f64], class: usize) -> [f64; NUM_CHANNELS] {
    let mu = task.class_mean(class);
    let sq: f64 = x.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
    let affinity = (-sq / (2.0 * AFFINITY_WIDTH * AFFINITY_WIDTH)).exp();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mn = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    let align = if xn == 0.0 || mn == 0.0 {
        0.5
    } else {
        let cos = x.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() / (xn * mn);
        0.5 * (1.0 + cos.clamp(-1.0, 1.0))
    };
    [affinity, -sq, align]
}

/// Per-leaf channel rewards and their weighted aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub per_channel: Vec<[f64; NUM_CHANNELS]>,
    pub aggregate: Vec<f64>,
    pub weights: [f64; NUM_CHANNELS],
}

impl RewardReport {
    pub fn score(task: &ToyTask, endpoints: &[Vec<f64>], class: usize, weights: [f64; NUM_CHANNELS]) -> Self {
        let per_channel: Vec<_> = endpoints.iter().map(|x| reward_channels(task, x, class)).collect();
        let aggregate = per_channel
            .iter()
            .map(|r| r.iter().zip(&weights).map(|(a, w)| a * w).sum())
            .collect();
        Self {
            per_channel,
            aggregate,
            weights,
        }
    }

    /// Index of the highest aggregate reward; the first one on ties.
    pub fn best(&self) -> usize {
        self.aggregate
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// `A_i = sum_k w_k (r_ik - mean_k) / (std_k + 1e-8)` with population std;
/// channels whose std is below `1e-8` contribute nothing.
pub fn advantages(rewards: &[Vec<f64>], weights: &[f64]) -> Result<AdvantageSet> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupSize(g));
    }
    let k = weights.len();
    if rewards.iter().any(|r| r.len() != k) {
        return Err(Error::Layout(format!("reward rows must have {k} channels")));
    }
    let mut values = vec![0.0; g];
    let mut means = Vec::with_capacity(k);
    let mut stds = Vec::with_capacity(k);
    for (c, &w) in weights.iter().enumerate() {
        let mean = rewards.iter().map(|r| r[c]).sum::<f64>() / g as f64;
        let var = rewards.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / g as f64;
        let std = var.sqrt();
        means.push(mean);
        stds.push(std);
        if std < STD_EPS {
            continue;
        }
        for (a, r) in values.iter_mut().zip(rewards) {
            *a += w * (r[c] - mean) / (std + STD_EPS);
        }
    }
    Ok(AdvantageSet { values, means, stds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn channels_at_class_mean() {
        let task = ToyTask::default();
        let mu = task.class_mean(2);
        let r = reward_channels(&task, &mu, 2);
        assert!((r[0] - 1.0).abs() < 1e-15 && r[1] == 0.0 && (r[2] - 1.0).abs() < 1e-15);
        let anti = [-mu[0], -mu[1]];
        assert!(reward_channels(&task, &anti, 2)[2].abs() < 1e-15);
        let one_std = [mu[0] + 0.25, mu[1]];
        assert!((reward_channels(&task, &one_std, 2)[0] - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(reward_channels(&task, &[0.0, 0.0], 0)[2], 0.5);
    }

    #[test]
    fn single_channel_standardization() {
        let a = advantages(&rows(&[1.0, 2.0, 3.0]), &[1.0]).unwrap();
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((a.values[0] + z).abs() < 1e-6 && a.values[1].abs() < 1e-12 && (a.values[2] - z).abs() < 1e-6);
        assert!((a.values[0] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn two_identical_channels_add() {
        let r: Vec<Vec<f64>> = [1.0, 2.0, 3.0].iter().map(|&x| vec![x, x]).collect();
        let a = advantages(&r, &[1.0, 1.0]).unwrap();
        assert!((a.values[0] + 2.4495).abs() < 1e-4 && (a.values[2] - 2.4495).abs() < 1e-4);
    }

    #[test]
    fn degenerate_group_gives_zero() {
        let a = advantages(&rows(&[0.7; 5]), &[1.0]).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.0));
        assert!(matches!(advantages(&rows(&[1.0]), &[1.0]), Err(Error::GroupSize(1))));
    }

    #[test]
    fn best_prefers_first_maximum() {
        let r = RewardReport {
            per_channel: vec![],
            aggregate: vec![0.1, 0.9, 0.9, -2.0],
            weights: [1.0; 3],
        };
        assert_eq!(r.best(), 1);
    }

    proptest! {
        #[test]
        fn invariant_to_shift_and_scale(
            vals in proptest::collection::vec(-5.0f64..5.0, 8),
            shift in -10.0f64..10.0,
            scale in 0.1f64..10.0,
        ) {
            let base = advantages(&rows(&vals), &[1.0]).unwrap();
            prop_assume!(base.stds[0] > 1e-3);
            let moved: Vec<f64> = vals.iter().map(|v| scale * v + shift).collect();
            let other = advantages(&rows(&moved), &[1.0]).unwrap();
            for (a, b) in base.values.iter().zip(&other.values) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn reversal_reverses(vals in proptest::collection::vec(-5.0f64..5.0, 2..10)) {
            let a = advantages(&rows(&vals), &[1.0]).unwrap();
            let rev: Vec<f64> = vals.iter().rev().copied().collect();
            let b = advantages(&rows(&rev), &[1.0]).unwrap();
            for (x, y) in a.values.iter().zip(b.values.iter().rev()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
