//! Brute-force checks kept independent of the optimized code paths:
//! per-leaf replay of the tree sampler, central finite differences and the
//! energy two-sample statistic with a permutation null.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{ode_step, sde_step, SdeConfig, TimeGrid};
use crate::nnet::{ParamVector, VelocityModel};
use crate::rng::{seeded, NoiseKey, NoiseStream};
use crate::treesampler::{TreeId, WindowSchedule};

/// Simulates every leaf of a tree on its own, end to end, drawing the same
/// keyed noise the tree sampler uses. Returns `G` sequences of `T + 1`
/// states.
#[allow(clippy::too_many_arguments)]
pub fn naive_group_rollout<M: VelocityModel + ?Sized>(
    field_old: &M,
    class: usize,
    sched: &WindowSchedule,
    grid: &TimeGrid,
    cfg: &SdeConfig,
    streams: &NoiseStream,
    id: TreeId,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = sched.depth;
    let leaves = 1usize << (d - 1);
    let dim = field_old.state_dim();
    let dt = grid.dt();
    (0..leaves)
        .map(|leaf| {
            let mut x = streams.normal(
                &NoiseKey {
                    iteration: id.iteration,
                    prompt: id.prompt,
                    tree: id.tree,
                    path: 0,
                    layer: 0,
                },
                dim,
            );
            let mut states = vec![x.clone()];
            for step in 0..grid.steps {
                let t = grid.t(step);
                x = if step >= sched.tau && step < sched.tau + d {
                    let k = step - sched.tau + 1;
                    // bits of the leaf index that are decided by layer k
                    let decided = k.min(d - 1);
                    let path = (leaf as u64) >> (d - 1 - decided);
                    let key = NoiseKey {
                        iteration: id.iteration,
                        prompt: id.prompt,
                        tree: id.tree,
                        path,
                        layer: k as u64,
                    };
                    let eps = streams.normal(&key, dim);
                    sde_step(field_old, &x, t, dt, k, &eps, class, cfg)?.x_next
                } else {
                    ode_step(field_old, &x, t, dt, class)?
                };
                states.push(x.clone());
            }
            Ok(states)
        })
        .collect()
}

/// Central differences of `loss` around `params`.
///
/// The probe step is rounded to the nearest power of two and each side is
/// rounded to storage precision; the quotient uses the probes that were
/// actually evaluated, in double precision.
pub fn finite_diff_grad<F>(loss: F, params: &ParamVector, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let h = 2f64.powi(step.log2().round() as i32);
    (0..params.len())
        .into_par_iter()
        .map(|j| {
            let mut probe = params.clone();
            let p = f64::from(params.values()[j]);
            let plus = (p + h) as f32;
            let minus = (p - h) as f32;
            probe.values_mut()[j] = plus;
            let fp = loss(&probe)?;
            probe.values_mut()[j] = minus;
            let fm = loss(&probe)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Probe(j));
            }
            Ok((fp - fm) / (f64::from(plus) - f64::from(minus)))
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.par_iter()
        .map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum::<f64>()
        / (a.len() * b.len()) as f64
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` over all pairs.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// Null quantile at the requested level.
    pub threshold: f64,
    pub p_value: f64,
    pub null: Vec<f64>,
}

impl PermutationTest {
    pub fn passes(&self) -> bool {
        self.statistic <= self.threshold
    }
}

/// Energy distance of `a` vs `b` against its label-permutation null.
pub fn energy_permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    shuffles: usize,
    level: f64,
    seed: u64,
) -> Result<PermutationTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let n = pooled.len();
    // condensed upper triangle, row i holds j > i
    let row_start: Vec<usize> = (0..n).map(|i| i * n - i * (i + 1) / 2).collect();
    let tri: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pi = pooled[i];
            pooled[i + 1..].iter().map(move |pj| dist(pi, pj)).collect::<Vec<_>>()
        })
        .collect();
    let total: f64 = tri.iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let stat_for = |in_a: &[bool]| {
        let (mut saa, mut sbb) = (0.0, 0.0);
        for i in 0..n {
            let row = &tri[row_start[i]..row_start[i] + (n - 1 - i)];
            let mut s_same = 0.0;
            for (off, &dij) in row.iter().enumerate() {
                if in_a[i + 1 + off] == in_a[i] {
                    s_same += dij;
                }
            }
            if in_a[i] {
                saa += s_same;
            } else {
                sbb += s_same;
            }
        }
        let sab = total - saa - sbb;
        2.0 * sab / (na * nb) - 2.0 * saa / (na * na) - 2.0 * sbb / (nb * nb)
    };
    let labels: Vec<bool> = (0..n).map(|i| i < a.len()).collect();
    let statistic = stat_for(&labels);
    let mut null: Vec<f64> = (0..shuffles)
        .into_par_iter()
        .map(|s| {
            let mut l = labels.clone();
            l.shuffle(&mut seeded(seed, s as u64));
            stat_for(&l)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let idx = ((level * shuffles as f64).ceil() as usize).clamp(1, shuffles.max(1)) - 1;
    let threshold = null.get(idx).copied().unwrap_or(f64::INFINITY);
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    Ok(PermutationTest {
        statistic,
        threshold,
        p_value: (exceed + 1) as f64 / (shuffles + 1) as f64,
        null,
    })
}
