use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_EPS: f64 = 1e-12;

/// Denoising time grid, `t_i = clamp(1 - i/T)` for `i = 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub t_min: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(steps: usize, t_min: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("grid needs at least one step".into()));
        }
        if !(t_min > 0.0 && t_min < 0.5) {
            return Err(Error::Schedule(format!("t_min {t_min} outside (0, 0.5)")));
        }
        let nodes = (0..=steps)
            .map(|i| (1.0 - i as f64 / steps as f64).clamp(t_min, 1.0 - t_min))
            .collect();
        Ok(Self {
            steps,
            t_min,
            nodes,
        })
    }

    /// Signed step; negative while denoising.
    pub fn dt(&self) -> f64 {
        -1.0 / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Parameters of the stochastic kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    /// Noise level `a` in `sigma_t = a sqrt(t / (1 - t))`.
    pub a: f64,
    pub t_min: f64,
    /// Growth rate of the per-layer noise multiplier.
    pub beta: f64,
    pub depth: usize,
    /// `sigma_t` is evaluated at `min(t, sigma_t_max)` inside the kernel.
    pub sigma_t_max: f64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            a: 0.7,
            t_min: 1e-3,
            beta: 0.7,
            depth: 4,
            sigma_t_max: 0.96,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::Config(format!("noise level a = {} must be >= 0", self.a)));
        }
        if !(self.t_min > 0.0 && self.t_min < 0.5) {
            return Err(Error::Config(format!("t_min = {} outside (0, 0.5)", self.t_min)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta = {} must be >= 0", self.beta)));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if !(self.sigma_t_max >= self.t_min && self.sigma_t_max <= 1.0 - self.t_min) {
            return Err(Error::Config(format!(
                "sigma_t_max = {} outside [t_min, 1 - t_min]",
                self.sigma_t_max
            )));
        }
        Ok(())
    }
}

/// `sigma_t = a sqrt(t / (1 - t))` on `[t_min, 1 - t_min]`.
pub fn sigma(t: f64, cfg: &SdeConfig) -> Result<f64> {
    if !(t >= cfg.t_min - GRID_EPS && t <= 1.0 - cfg.t_min + GRID_EPS) {
        return Err(Error::Schedule(format!(
            "t = {t} outside [{}, {}]",
            cfg.t_min,
            1.0 - cfg.t_min
        )));
    }
    Ok(cfg.a * (t / (1.0 - t)).sqrt())
}

/// The `sigma_t` used by the kernel: `sigma` at `min(t, sigma_t_max)`.
pub fn kernel_sigma(t: f64, cfg: &SdeConfig) -> Result<f64> {
    sigma(t, cfg)?;
    sigma(t.min(cfg.sigma_t_max), cfg)
}

/// Layer-scaled noise `sigma_t (1 + beta k / d)` for tree layer `k`.
pub fn noise_scale(t: f64, k: usize, cfg: &SdeConfig) -> Result<f64> {
    if k == 0 || k > cfg.depth {
        return Err(Error::Layer {
            k,
            depth: cfg.depth,
        });
    }
    Ok(kernel_sigma(t, cfg)? * (1.0 + cfg.beta * k as f64 / cfg.depth as f64))
}
