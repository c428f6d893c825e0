//! Single-step transition kernels.
//!
//! ODE: `x + v dt`.
//! SDE: `x + [v + sigma_t^2 / (2t) (x + (1 - t) v)] dt + g_t(k) sqrt|dt| eps`,
//! where the drift keeps the base `sigma_t` and only the injected noise uses
//! the layer-scaled `g_t(k)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::schedule::{kernel_sigma, noise_scale, SdeConfig};
use crate::error::{Error, Result};
use crate::nnet::VelocityModel;

/// One recorded state transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x_from: Vec<f64>,
    pub x_to: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    /// Tree layer of the edge, 0 for deterministic steps.
    pub layer_k: usize,
    pub noise: Option<Vec<f64>>,
    pub logprob_old: Option<f64>,
}

impl Transition {
    pub fn is_stochastic(&self) -> bool {
        self.layer_k > 0
    }
}

/// Coefficients of the SDE kernel at `(t, k, dt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeCoeffs {
    /// `sigma_t^2 / (2t)`
    pub drift: f64,
    pub std: f64,
    /// d(mean)/d(v), a scalar since the kernel is isotropic.
    pub dmean_dv: f64,
}

pub fn sde_coeffs(t: f64, dt: f64, k: usize, cfg: &SdeConfig) -> Result<SdeCoeffs> {
    if t <= 0.0 {
        return Err(Error::Schedule(format!("SDE drift needs t > 0, got {t}")));
    }
    let s = kernel_sigma(t, cfg)?;
    let drift = s * s / (2.0 * t);
    let std = noise_scale(t, k, cfg)? * dt.abs().sqrt();
    Ok(SdeCoeffs {
        drift,
        std,
        dmean_dv: (1.0 + drift * (1.0 - t)) * dt,
    })
}

/// Mean of the SDE kernel given the velocity `v` at `x`.
pub fn sde_mean(x: &[f64], v: &[f64], t: f64, dt: f64, drift: f64) -> Vec<f64> {
    x.iter()
        .zip(v)
        .map(|(&xi, &vi)| xi + (vi + drift * (xi + (1.0 - t) * vi)) * dt)
        .collect()
}

fn check_finite(x: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(what()))
    }
}

/// Explicit Euler step of `dx = v dt`.
pub fn ode_step<M: VelocityModel + ?Sized>(
    field: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    class: usize,
) -> Result<Vec<f64>> {
    check_finite(x, || format!("ODE input at t = {t}"))?;
    let v = field.velocity(x, t, class)?;
    let out: Vec<f64> = x.iter().zip(&v).map(|(&xi, &vi)| xi + vi * dt).collect();
    check_finite(&out, || format!("ODE output at t = {t}"))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeOutput {
    pub x_next: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl SdeOutput {
    /// Log-density of `x_next`; `None` for a zero-noise (point-mass) step.
    pub fn logprob(&self) -> Result<Option<f64>> {
        if self.std == 0.0 {
            return Ok(None);
        }
        transition_logpdf(&self.x_next, &self.mean, self.std).map(Some)
    }
}

/// One stochastic step on tree layer `k` with the standard normal draw `eps`.
#[allow(clippy::too_many_arguments)]
pub fn sde_step<M: VelocityModel + ?Sized>(
    field: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    k: usize,
    eps: &[f64],
    class: usize,
    cfg: &SdeConfig,
) -> Result<SdeOutput> {
    check_finite(x, || format!("SDE input at t = {t}"))?;
    let c = sde_coeffs(t, dt, k, cfg)?;
    let v = field.velocity(x, t, class)?;
    let mean = sde_mean(x, &v, t, dt, c.drift);
    let x_next = if c.std == 0.0 {
        mean.clone()
    } else {
        mean.iter().zip(eps).map(|(&m, &e)| m + c.std * e).collect()
    };
    check_finite(&x_next, || format!("SDE output at t = {t}"))?;
    Ok(SdeOutput {
        x_next,
        mean,
        std: c.std,
    })
}

/// Log-density of an isotropic Gaussian transition.
pub fn transition_logpdf(x_to: &[f64], mean: &[f64], std: f64) -> Result<f64> {
    if std.is_nan() || std <= 0.0 {
        return Err(Error::Density(std));
    }
    let d = x_to.len() as f64;
    let sq: f64 = x_to.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * d * (2.0 * PI * std * std).ln() - sq / (2.0 * std * std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{MlpConfig, VelocityField};

    struct Constant(Vec<f64>);

    impl VelocityModel for Constant {
        fn state_dim(&self) -> usize {
            self.0.len()
        }
        fn num_classes(&self) -> usize {
            1
        }
        fn num_params(&self) -> usize {
            0
        }
        fn velocity(&self, _: &[f64], _: f64, _: usize) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
        fn accumulate_vjp(&self, _: &[f64], _: f64, _: usize, _: &[f64], _: &mut [f64]) -> Result<()> {
            Ok(())
        }
    }

    fn cfg(a: f64, beta: f64) -> SdeConfig {
        SdeConfig {
            a,
            beta,
            ..SdeConfig::default()
        }
    }

    #[test]
    fn ode_with_zero_field_is_identity() {
        let x = [0.3, -1.2];
        assert_eq!(ode_step(&Constant(vec![0.0, 0.0]), &x, 0.5, -0.04, 0).unwrap(), x);
    }

    #[test]
    fn ode_with_constant_field() {
        let out = ode_step(&Constant(vec![1.0, 0.0]), &[0.5, 0.5], 0.5, -0.04, 0).unwrap();
        assert_eq!(out, vec![0.5 - 0.04, 0.5]);
    }

    #[test]
    fn ode_reports_divergence() {
        let out = ode_step(&Constant(vec![f64::MAX, 0.0]), &[f64::MAX, 0.0], 0.5, -2.0, 0);
        assert!(matches!(out, Err(Error::Divergence(_))));
    }

    #[test]
    fn sde_without_noise_level_equals_ode() {
        let f = VelocityField::new_random(MlpConfig::default(), 2).unwrap();
        let x = [0.4, -0.9];
        for &t in &[0.999, 0.5, 0.04] {
            let ode = ode_step(&f, &x, t, -0.04, 1).unwrap();
            let sde = sde_step(&f, &x, t, -0.04, 1, &[0.7, -1.3], 1, &cfg(0.0, 0.7)).unwrap();
            let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&sde.mean), bits(&ode));
            assert_eq!(bits(&sde.x_next), bits(&ode));
        }
    }

    #[test]
    fn zero_draw_lands_on_mean() {
        let out = sde_step(&Constant(vec![0.2, 0.1]), &[1.0, 1.0], 0.5, -0.04, 2, &[0.0, 0.0], 0, &cfg(0.7, 0.7))
            .unwrap();
        assert_eq!(out.x_next, out.mean);
    }

    #[test]
    fn sde_reference_values() {
        // sigma_0.5 = 0.7, sigma^2/(2t) = 0.49, mean = x (1 - 0.49 * 0.04)
        let out = sde_step(&Constant(vec![0.0, 0.0]), &[1.0, 0.0], 0.5, -0.04, 1, &[0.0, 0.0], 0, &cfg(0.7, 0.0))
            .unwrap();
        assert!((out.mean[0] - 0.9804).abs() < 1e-12);
        assert_eq!(out.mean[1], 0.0);
        assert!((out.std - 0.14).abs() < 1e-12);
    }

    #[test]
    fn sde_rejects_nonpositive_time() {
        let c = SdeConfig {
            t_min: 1e-3,
            ..cfg(0.7, 0.0)
        };
        assert!(matches!(sde_coeffs(0.0, -0.04, 1, &c), Err(Error::Schedule(_))));
    }

    #[test]
    fn logpdf_values() {
        let lp = transition_logpdf(&[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp - (-1.8379)).abs() < 1e-4);
        let shifted = transition_logpdf(&[0.3, 0.0], &[0.0, 0.0], 0.3).unwrap();
        let at_mode = transition_logpdf(&[0.0, 0.0], &[0.0, 0.0], 0.3).unwrap();
        assert!((at_mode - shifted - 0.5).abs() < 1e-12);
        assert!(matches!(transition_logpdf(&[0.0], &[0.0], 0.0), Err(Error::Density(_))));
    }

    #[test]
    fn logpdf_integrates_to_one_in_one_dimension() {
        // midpoint rule over +-10 std
        let (mean, std) = (0.3, 0.7);
        let n = 200_000;
        let lo = mean - 10.0 * std;
        let h = 20.0 * std / n as f64;
        let mass: f64 = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                transition_logpdf(&[x], &[mean], std).unwrap().exp() * h
            })
            .sum();
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
    }

    #[test]
    fn logpdf_peaks_at_mean() {
        let m = [0.2, -0.4];
        let peak = transition_logpdf(&m, &m, 0.5).unwrap();
        for d in [[0.01, 0.0], [0.0, -0.01], [0.3, 0.3]] {
            let x = [m[0] + d[0], m[1] + d[1]];
            assert!(transition_logpdf(&x, &m, 0.5).unwrap() < peak);
        }
    }
}
