//! Conditional flow-matching pretraining on the path `x_t = (1 - t) x0 + t eps`
//! with regression target `u = eps - x0`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{optimizer_step, AdamState, AdamW, ParamVector, VelocityField, VelocityModel};
use crate::reduce::{par_accumulate, LossGrad};
use crate::rng::seeded;
use crate::toy::Sample;

/// A data point with its interpolation time and noise already drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct CfmSample {
    pub x0: Vec<f64>,
    pub class: usize,
    pub t: f64,
    pub eps: Vec<f64>,
}

impl CfmSample {
    pub fn x_t(&self) -> Vec<f64> {
        self.x0
            .iter()
            .zip(&self.eps)
            .map(|(&x, &e)| (1.0 - self.t) * x + self.t * e)
            .collect()
    }

    pub fn target(&self) -> Vec<f64> {
        self.eps.iter().zip(&self.x0).map(|(e, x)| e - x).collect()
    }
}

pub fn draw_cfm_samples<R: Rng>(batch: &[Sample], t_min: f64, rng: &mut R) -> Vec<CfmSample> {
    batch
        .iter()
        .map(|s| {
            let t = rng.gen_range(t_min..=1.0 - t_min);
            let eps = (0..s.x.len()).map(|_| rng.sample(StandardNormal)).collect();
            CfmSample {
                x0: s.x.clone(),
                class: s.class,
                t,
                eps,
            }
        })
        .collect()
}

/// Mean squared velocity error over pre-drawn samples, with gradient.
pub fn cfm_loss<M: VelocityModel + ?Sized>(field: &M, samples: &[CfmSample]) -> Result<LossGrad> {
    if samples.is_empty() {
        return Err(Error::Batch("empty pretraining batch".into()));
    }
    let n = samples.len() as f64;
    let mut out = par_accumulate(samples, field.num_params(), |s, acc| {
        let xt = s.x_t();
        let v = field.velocity(&xt, s.t, s.class)?;
        let u = s.target();
        let diff: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - b).collect();
        acc.loss += diff.iter().map(|d| d * d).sum::<f64>();
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        field.accumulate_vjp(&xt, s.t, s.class, &upstream, &mut acc.grad)
    })?;
    out.loss /= n;
    Ok(out)
}

/// Draws `t` and `eps` for every sample, then evaluates [`cfm_loss`].
pub fn cfm_pretrain_loss<R: Rng>(
    field: &VelocityField,
    batch: &[Sample],
    t_min: f64,
    rng: &mut R,
) -> Result<(f64, ParamVector)> {
    let samples = draw_cfm_samples(batch, t_min, rng);
    let lg = cfm_loss(field, &samples)?;
    Ok((lg.loss, ParamVector::from_f64(&lg.grad, field.params().layout().to_vec())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub t_min: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            t_min: 1e-3,
            seed: 0,
        }
    }
}

/// Runs `cfg.steps` AdamW steps of flow matching; returns per-step losses.
pub fn pretrain(
    field: &mut VelocityField,
    data: &[Sample],
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Batch("empty pretraining data".into()));
    }
    let hp = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut state = AdamState::new(field.params().len());
    let mut rng = seeded(cfg.seed, 0x9E7A);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|_| data[rng.gen_range(0..data.len())].clone())
            .collect();
        let (loss, grad) = cfm_pretrain_loss(field, &batch, cfg.t_min, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("pretraining loss at step {step}")));
        }
        optimizer_step(field.params_mut(), &grad, &mut state, &hp)?;
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::MlpConfig;
    use crate::toy::ToyTask;

    #[test]
    fn zero_field_loss_is_target_energy() {
        let f = VelocityField::new(MlpConfig::default(), 0).unwrap();
        let data = ToyTask::default().generate(8, 1);
        let samples = draw_cfm_samples(&data, 1e-3, &mut seeded(1, 2));
        let want: f64 = samples
            .iter()
            .map(|s| s.target().iter().map(|u| u * u).sum::<f64>())
            .sum::<f64>()
            / samples.len() as f64;
        let got = cfm_loss(&f, &samples).unwrap();
        assert!((got.loss - want).abs() < 1e-12);
        // E||eps - x0||^2 = D + E||x0||^2 = 2 + 4 + 2 * 0.0625
        let big = ToyTask::default().generate(2000, 3);
        let s = draw_cfm_samples(&big, 1e-3, &mut seeded(3, 4));
        let l = cfm_loss(&f, &s).unwrap().loss;
        assert!((l - 6.125).abs() < 0.15, "{l}");
    }

    struct Oracle;
    impl VelocityModel for Oracle {
        fn state_dim(&self) -> usize {
            2
        }
        fn num_classes(&self) -> usize {
            4
        }
        fn num_params(&self) -> usize {
            0
        }
        fn velocity(&self, x: &[f64], t: f64, _: usize) -> Result<Vec<f64>> {
            // the test data below has x0 = 0, so eps = x_t / t
            Ok(x.iter().map(|v| v / t).collect())
        }
        fn accumulate_vjp(&self, _: &[f64], _: f64, _: usize, _: &[f64], _: &mut [f64]) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn exact_field_has_zero_loss() {
        let data = vec![
            Sample {
                class: 0,
                x: vec![0.0, 0.0]
            };
            8
        ];
        let s = draw_cfm_samples(&data, 1e-3, &mut seeded(0, 0));
        assert!(cfm_loss(&Oracle, &s).unwrap().loss < 1e-24);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let f = VelocityField::new(MlpConfig::default(), 0).unwrap();
        assert!(matches!(cfm_loss(&f, &[]), Err(Error::Batch(_))));
    }

    #[test]
    fn zero_steps_leave_initialization() {
        let mut f = VelocityField::new(MlpConfig::default(), 5).unwrap();
        let before = f.clone();
        let cfg = PretrainConfig {
            steps: 0,
            ..PretrainConfig::default()
        };
        pretrain(&mut f, &ToyTask::default().generate(4, 0), &cfg, |_, _| {}).unwrap();
        assert_eq!(f, before);
    }

    #[test]
    fn short_run_reduces_loss() {
        let mut f = VelocityField::new(MlpConfig::default(), 5).unwrap();
        let cfg = PretrainConfig {
            steps: 200,
            batch_size: 64,
            ..PretrainConfig::default()
        };
        let losses = pretrain(&mut f, &ToyTask::default().generate(256, 0), &cfg, |_, _| {}).unwrap();
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }
}
