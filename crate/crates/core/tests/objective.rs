mod common;

use common::*;
use treerpo_core::flow::kernel_sigma;
use treerpo_core::nnet::{VelocityField, VelocityModel};
use treerpo_core::reduce::LossGrad;
use treerpo_core::rlcore::{
    clipped_surrogate, fused_loss, grpo_tree_loss, sft_loss_against, sft_prm_loss, sft_targets, ClipConfig,
    FusionConfig,
};
use treerpo_core::{Error, Result};

fn wide_clip() -> ClipConfig {
    // radius large enough that no term sits on a clip kink
    ClipConfig {
        eps_low: 0.5,
        eps_high: 0.5,
        ..ClipConfig::default()
    }
}

fn field(seed: u64) -> VelocityField {
    VelocityField::new_random(small_config(vec![16, 16]), seed).unwrap()
}

#[test]
fn ratio_is_one_under_the_old_policy() {
    let old = field(1);
    let batch = tree_batch(&old, 4, 6, 3, 1);
    let (out, stats) = grpo_tree_loss(&old, &batch, &ClipConfig::default()).unwrap();
    assert!(stats.max_ratio_dev <= f64::EPSILON, "{}", stats.max_ratio_dev);
    assert_eq!(stats.clip_frac, 0.0);
    assert!(out.loss.abs() < 1e-12, "{}", out.loss);
    assert!(out.grad.iter().any(|g| *g != 0.0));
}

#[test]
fn zero_advantages_give_zero_loss_and_gradient() {
    let old = field(2);
    let new = perturbed(&old, 0.01, 5);
    let batch = tree_batch(&old, 4, 3, 4, 0).with_advantages(vec![0.0; 8]);
    let (out, _) = grpo_tree_loss(&new, &batch, &ClipConfig::default()).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grad.iter().all(|g| *g == 0.0));
}

#[test]
fn clip_algebra() {
    let eps = 0.01;
    let (v, clipped) = clipped_surrogate(1.0 + 2.0 * eps, 1.0, eps);
    assert!(clipped);
    assert_eq!(v, 1.0 + eps);
    let (v, clipped) = clipped_surrogate(1.0 - 2.0 * eps, 1.0, eps);
    assert!(!clipped);
    assert_eq!(v, 1.0 - 2.0 * eps);
    let (v, clipped) = clipped_surrogate(1.0 - 2.0 * eps, -1.0, eps);
    assert!(clipped);
    assert_eq!(v, -(1.0 - eps));
    assert_eq!(clipped_surrogate(1.0, 0.0, eps), (0.0, false));
}

#[test]
fn missing_old_logprob_is_reported() {
    let old = field(3);
    let mut batch = tree_batch(&old, 4, 0, 1, 2);
    batch.rollout.leaves[2].transitions[1].logprob_old = None;
    assert!(matches!(
        grpo_tree_loss(&old, &batch, &ClipConfig::default()),
        Err(Error::Ledger(_))
    ));
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let old = field(4);
    let new = perturbed(&old, 0.02, 9);
    let batch = tree_batch(&old, 4, 8, 11, 3);
    let (out, stats) = grpo_tree_loss(&new, &batch, &wide_clip()).unwrap();
    assert_eq!(stats.clip_frac, 0.0);
    let err = fd_rel_error(
        |p| Ok(grpo_tree_loss(&with_params(&new, p), &batch, &wide_clip())?.0.loss),
        new.params(),
        &out.grad,
    );
    assert!(err <= FD_TOL, "rel err {err}");
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let old = field(5);
    let new = perturbed(&old, 0.02, 10);
    let batch = tree_batch(&old, 4, 12, 12, 0);
    let targets = sft_targets(&new, &batch).unwrap();
    let out = sft_loss_against(&new, &batch, &targets).unwrap();
    assert!(out.loss > 0.0);
    let err = fd_rel_error(
        |p| Ok(sft_loss_against(&with_params(&new, p), &batch, &targets)?.loss),
        new.params(),
        &out.grad,
    );
    assert!(err <= FD_TOL, "rel err {err}");
}

#[test]
fn fused_gradient_is_the_weighted_sum() {
    let old = field(6);
    let new = perturbed(&old, 0.02, 11);
    let batch = tree_batch(&old, 4, 4, 13, 2);
    let fusion = FusionConfig { lambda: 0.3 };
    let (total, stats) = fused_loss(&new, &batch, &wide_clip(), &fusion).unwrap();
    let (grpo, _) = grpo_tree_loss(&new, &batch, &wide_clip()).unwrap();
    let sft = sft_prm_loss(&new, &batch).unwrap();
    let mut sum = LossGrad::zeros(grpo.grad.len());
    sum.add_scaled(&grpo, 1.0);
    sum.add_scaled(&sft, fusion.lambda);
    assert!((total.loss - sum.loss).abs() <= 1e-12 * sum.loss.abs().max(1.0));
    for (a, b) in total.grad.iter().zip(&sum.grad) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
    }
    assert_eq!(stats.loss_grpo, grpo.loss);
    assert_eq!(stats.loss_sft, sft.loss);

    let targets = sft_targets(&new, &batch).unwrap();
    let err = fd_rel_error(
        |p| {
            let f = with_params(&new, p);
            Ok(grpo_tree_loss(&f, &batch, &wide_clip())?.0.loss
                + fusion.lambda * sft_loss_against(&f, &batch, &targets)?.loss)
        },
        new.params(),
        &total.grad,
    );
    assert!(err <= FD_TOL, "rel err {err}");
}

#[test]
fn lambda_zero_is_plain_grpo() {
    let old = field(7);
    let new = perturbed(&old, 0.01, 12);
    let batch = tree_batch(&old, 4, 2, 14, 1);
    let (a, _) = fused_loss(&new, &batch, &ClipConfig::default(), &FusionConfig { lambda: 0.0 }).unwrap();
    let (b, _) = grpo_tree_loss(&new, &batch, &ClipConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sft_is_zero_for_a_single_leaf_and_on_the_shared_layer() {
    let old = field(8);
    let single = tree_batch(&old, 1, 5, 1, 0);
    assert_eq!(single.size(), 1);
    let out = sft_prm_loss(&old, &single).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grad.iter().all(|g| *g == 0.0));
    let (g, _) = grpo_tree_loss(&old, &single, &ClipConfig::default()).unwrap();
    assert_eq!(g.loss, 0.0);

    // the first window layer starts from the shared root for every leaf
    let batch = tree_batch(&old, 4, 5, 2, 0);
    let targets = sft_targets(&old, &batch).unwrap();
    for leaf in &batch.rollout.leaves {
        let v = old.velocity(&leaf.transitions[0].x_from, leaf.transitions[0].t, 0).unwrap();
        assert_eq!(v, targets[0]);
    }
    assert!(sft_prm_loss(&old, &batch).unwrap().loss > 0.0);
}

/// Agrees with `inner` inside `[lo, hi]` and is shifted elsewhere.
struct TimeMasked<'a> {
    inner: &'a VelocityField,
    lo: f64,
    hi: f64,
}

impl VelocityModel for TimeMasked<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }
    fn velocity(&self, x: &[f64], t: f64, class: usize) -> Result<Vec<f64>> {
        let mut v = self.inner.velocity(x, t, class)?;
        if t < self.lo || t > self.hi {
            v.iter_mut().for_each(|c| *c += 3.0);
        }
        Ok(v)
    }
    fn accumulate_vjp(&self, x: &[f64], t: f64, class: usize, up: &[f64], grad: &mut [f64]) -> Result<()> {
        self.inner.accumulate_vjp(x, t, class, up, grad)
    }
}

#[test]
fn only_window_transitions_enter_the_objective() {
    let old = field(9);
    let new = perturbed(&old, 0.02, 13);
    let batch = tree_batch(&old, 4, 9, 3, 2);
    let ts: Vec<f64> = batch.rollout.leaves[0].transitions.iter().map(|tr| tr.t).collect();
    let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-9;
    let hi = ts.iter().cloned().fold(0.0, f64::max) + 1e-9;
    let masked = TimeMasked { inner: &new, lo, hi };
    let (a, _) = grpo_tree_loss(&new, &batch, &ClipConfig::default()).unwrap();
    let (b, _) = grpo_tree_loss(&masked, &batch, &ClipConfig::default()).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grad, b.grad);
}

#[test]
fn cfm_gradient_matches_finite_differences() {
    use treerpo_core::flow::{cfm_loss, draw_cfm_samples};
    use treerpo_core::rng::seeded;
    let f = field(10);
    let data = treerpo_core::toy::ToyTask::default().generate(8, 1);
    let samples = draw_cfm_samples(&data, 1e-3, &mut seeded(3, 3));
    let out = cfm_loss(&f, &samples).unwrap();
    let err = fd_rel_error(|p| Ok(cfm_loss(&with_params(&f, p), &samples)?.loss), f.params(), &out.grad);
    assert!(err <= FD_TOL, "rel err {err}");
}

#[test]
fn kernel_sigma_is_capped() {
    let cfg = treerpo_core::flow::SdeConfig::default();
    assert_eq!(kernel_sigma(0.999, &cfg).unwrap(), kernel_sigma(0.96, &cfg).unwrap());
}


#[test]
fn network_gradient_matches_finite_differences_on_random_configs() {
    use rand::Rng;
    use treerpo_core::nnet::{Activation, MlpConfig};
    use treerpo_core::rng::seeded;
    let mut rng = seeded(21, 0);
    for case in 0..6u64 {
        let layers = rng.gen_range(1..=3);
        let cfg = MlpConfig {
            hidden_dims: (0..layers).map(|_| rng.gen_range(2..=32)).collect(),
            activation: if case % 2 == 0 { Activation::Tanh } else { Activation::Gelu },
            ..MlpConfig::default()
        };
        let f = VelocityField::new_random(cfg, case).unwrap();
        let probes: Vec<(Vec<f64>, f64, usize, Vec<f64>)> = (0..4)
            .map(|i| {
                (
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    rng.gen_range(0.01..0.99),
                    i % 4,
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let loss = |m: &VelocityField| -> Result<f64> {
            let mut s = 0.0;
            for (x, t, c, u) in &probes {
                let v = m.velocity(x, *t, *c)?;
                s += v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(s)
        };
        let mut grad = vec![0.0; f.num_params()];
        for (x, t, c, u) in &probes {
            f.accumulate_vjp(x, *t, *c, u, &mut grad).unwrap();
        }
        let err = fd_rel_error(|p| loss(&with_params(&f, p)), f.params(), &grad);
        assert!(err <= FD_TOL, "case {case}: rel err {err}");
    }
}
