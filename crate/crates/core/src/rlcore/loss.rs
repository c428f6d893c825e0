//! Clipped group objective on window transitions, the best-leaf velocity
//! regression, and their fusion. Every loss is in minimization sign:
//! `total = -J_grpo + lambda * J_sft`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::GroupBatch;
use super::clip::{dynamic_epsilon, ClipConfig};
use crate::error::{Error, Result};
use crate::flow::{sde_coeffs, sde_mean, transition_logpdf, Transition};
use crate::nnet::VelocityModel;
use crate::reduce::{par_accumulate, LossGrad};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lambda: 0.02 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GrpoStats {
    /// Fraction of terms where the clipped branch is active.
    pub clip_frac: f64,
    /// Mean clip radius over leaves.
    pub eps_mean: f64,
    pub max_ratio_dev: f64,
    /// Objective contribution of each window position, summing to `-loss`.
    pub per_step: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FusedStats {
    pub loss_grpo: f64,
    pub loss_sft: f64,
    pub grpo: GrpoStats,
}

fn describe(leaf: usize, pos: usize) -> String {
    format!("leaf {leaf}, window position {pos}")
}

/// Log-density of `tr.x_to` under `field`'s kernel at `tr`, with the
/// kernel's mean, `d logp / d mean` scale and `d mean / d v`.
struct Recomputed {
    logp: f64,
    mean: Vec<f64>,
    std: f64,
    dmean_dv: f64,
}

fn recompute<M: VelocityModel + ?Sized>(
    field: &M,
    tr: &Transition,
    class: usize,
    batch: &GroupBatch,
) -> Result<Option<Recomputed>> {
    let c = sde_coeffs(tr.t, tr.dt, tr.layer_k, &batch.rollout.sde)?;
    if c.std == 0.0 {
        // point-mass kernel: ratio is identically one
        return Ok(None);
    }
    let v = field.velocity(&tr.x_from, tr.t, class)?;
    let mean = sde_mean(&tr.x_from, &v, tr.t, tr.dt, c.drift);
    let logp = transition_logpdf(&tr.x_to, &mean, c.std)?;
    Ok(Some(Recomputed {
        logp,
        mean,
        std: c.std,
        dmean_dv: c.dmean_dv,
    }))
}

struct Term<'a> {
    leaf: usize,
    pos: usize,
    tr: &'a Transition,
}

fn terms(batch: &GroupBatch) -> Vec<Term<'_>> {
    batch
        .rollout
        .leaves
        .iter()
        .enumerate()
        .flat_map(|(leaf, l)| {
            l.transitions
                .iter()
                .enumerate()
                .map(move |(pos, tr)| Term { leaf, pos, tr })
        })
        .collect()
}

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)` and whether the clipped
/// branch won.
pub fn clipped_surrogate(rho: f64, a: f64, eps: f64) -> (f64, bool) {
    let unclipped = rho * a;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * a;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

struct TermEval {
    /// `min(rho A, clip(rho) A)`
    value: f64,
    rho: f64,
    clipped: bool,
    /// d(loss)/dv when the unclipped branch is active.
    upstream: Option<Vec<f64>>,
}

fn eval_term<M: VelocityModel + ?Sized>(
    field: &M,
    term: &Term<'_>,
    batch: &GroupBatch,
    eps: f64,
    n: f64,
) -> Result<Option<TermEval>> {
    let a = batch.advantages.values[term.leaf];
    let Some(rc) = recompute(field, term.tr, batch.rollout.class, batch)? else {
        return Ok(None);
    };
    let old = term
        .tr
        .logprob_old
        .ok_or_else(|| Error::Ledger(describe(term.leaf, term.pos)))?;
    let rho = (rc.logp - old).exp();
    if !rho.is_finite() {
        return Err(Error::Ratio(describe(term.leaf, term.pos)));
    }
    let (value, clipped) = clipped_surrogate(rho, a, eps);
    if clipped {
        return Ok(Some(TermEval {
            value,
            rho,
            clipped: true,
            upstream: None,
        }));
    }
    let upstream = (a != 0.0).then(|| {
        let coef = -a * rho / n / (rc.std * rc.std) * rc.dmean_dv;
        term.tr
            .x_to
            .iter()
            .zip(&rc.mean)
            .map(|(x, mu)| coef * (x - mu))
            .collect()
    });
    Ok(Some(TermEval {
        value,
        rho,
        clipped: false,
        upstream,
    }))
}

/// `-mean_{i,t} min(rho A_i, clip(rho, 1 - eps_i, 1 + eps_i) A_i)` with
/// `eps_i` from the leaf's aggregate reward.
pub fn grpo_tree_loss<M: VelocityModel + ?Sized>(
    field_new: &M,
    batch: &GroupBatch,
    cfg: &ClipConfig,
) -> Result<(LossGrad, GrpoStats)> {
    let g = batch.size();
    let m = batch.window_len();
    if g == 0 || m == 0 {
        return Err(Error::Batch("group has no window transitions".into()));
    }
    let n = (g * m) as f64;
    let eps: Vec<f64> = batch
        .rewards
        .aggregate
        .iter()
        .map(|&r| dynamic_epsilon(r, cfg))
        .collect();
    let items = terms(batch);
    let evals: Vec<Option<TermEval>> = items
        .par_iter()
        .map(|term| eval_term(field_new, term, batch, eps[term.leaf], n))
        .collect::<Result<_>>()?;

    let mut objective = 0.0;
    let mut clipped = 0usize;
    let mut max_dev: f64 = 0.0;
    let mut per_step = vec![0.0; m];
    for (term, ev) in items.iter().zip(&evals) {
        if let Some(ev) = ev {
            objective += ev.value / n;
            per_step[term.pos] += ev.value / n;
            clipped += usize::from(ev.clipped);
            max_dev = max_dev.max((ev.rho - 1.0).abs());
        }
    }

    let active: Vec<(&Term<'_>, &Vec<f64>)> = items
        .iter()
        .zip(&evals)
        .filter_map(|(t, ev)| ev.as_ref().and_then(|e| e.upstream.as_ref()).map(|u| (t, u)))
        .collect();
    let class = batch.rollout.class;
    let mut out = par_accumulate(&active, field_new.num_params(), |(term, up), acc| {
        field_new.accumulate_vjp(&term.tr.x_from, term.tr.t, class, up, &mut acc.grad)
    })?;
    out.loss = -objective;
    let stats = GrpoStats {
        clip_frac: clipped as f64 / n,
        eps_mean: eps.iter().sum::<f64>() / g as f64,
        max_ratio_dev: max_dev,
        per_step,
    };
    Ok((out, stats))
}

/// Detached targets: the best leaf's velocity at each window position.
pub fn sft_targets<M: VelocityModel + ?Sized>(field: &M, batch: &GroupBatch) -> Result<Vec<Vec<f64>>> {
    let best = &batch.rollout.leaves[batch.best_leaf];
    best.transitions
        .iter()
        .map(|tr| field.velocity(&tr.x_from, tr.t, batch.rollout.class))
        .collect()
}

/// `mean_{i,t} |V*_t - v(s_{t,i})|^2` against fixed targets.
pub fn sft_loss_against<M: VelocityModel + ?Sized>(
    field: &M,
    batch: &GroupBatch,
    targets: &[Vec<f64>],
) -> Result<LossGrad> {
    let m = batch.window_len();
    let n = (batch.size() * m) as f64;
    if m == 0 || targets.len() != m {
        return Err(Error::Batch(format!("{} targets for {m} window positions", targets.len())));
    }
    let class = batch.rollout.class;
    let items = terms(batch);
    par_accumulate(&items, field.num_params(), |term, acc| {
        let target = &targets[term.pos];
        let v = field.velocity(&term.tr.x_from, term.tr.t, class)?;
        let diff: Vec<f64> = v.iter().zip(target).map(|(a, b)| a - b).collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        acc.loss += sq / n;
        if sq != 0.0 {
            let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
            field.accumulate_vjp(&term.tr.x_from, term.tr.t, class, &upstream, &mut acc.grad)?;
        }
        Ok(())
    })
}

/// Velocity regression toward the best leaf, targets gradient-stopped.
pub fn sft_prm_loss<M: VelocityModel + ?Sized>(field_new: &M, batch: &GroupBatch) -> Result<LossGrad> {
    let targets = sft_targets(field_new, batch)?;
    sft_loss_against(field_new, batch, &targets)
}

/// `grpo + lambda * sft`, gradients summed.
pub fn fused_loss<M: VelocityModel + ?Sized>(
    field_new: &M,
    batch: &GroupBatch,
    clip: &ClipConfig,
    fusion: &FusionConfig,
) -> Result<(LossGrad, FusedStats)> {
    let (mut total, grpo) = grpo_tree_loss(field_new, batch, clip)?;
    let loss_grpo = total.loss;
    let loss_sft = if fusion.lambda != 0.0 {
        let sft = sft_prm_loss(field_new, batch)?;
        total.add_scaled(&sft, fusion.lambda);
        sft.loss
    } else {
        0.0
    };
    Ok((
        total,
        FusedStats {
            loss_grpo,
            loss_sft,
            grpo,
        },
    ))
}
