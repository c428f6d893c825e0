use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward-conditioned clip radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    /// Reward sensitivity.
    pub eta: f64,
    /// Clamp the radius into `[eps_low, eps_high]` (matters for negative rewards).
    pub clamp: bool,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 5e-5,
            eps_high: 5e-3,
            eta: 0.5,
            clamp: true,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high) {
            return Err(Error::Config(format!(
                "need 0 < eps_low <= eps_high, got {} / {}",
                self.eps_low, self.eps_high
            )));
        }
        if self.eta.is_nan() || self.eta < 0.0 {
            return Err(Error::Config(format!("eta = {} must be >= 0", self.eta)));
        }
        Ok(())
    }
}

/// `eps_low + (eps_high - eps_low) exp(-eta R)`.
pub fn dynamic_epsilon(reward: f64, cfg: &ClipConfig) -> f64 {
    let eps = cfg.eps_low + (cfg.eps_high - cfg.eps_low) * (-cfg.eta * reward).exp();
    if cfg.clamp {
        eps.clamp(cfg.eps_low, cfg.eps_high)
    } else {
        eps
    }
}
