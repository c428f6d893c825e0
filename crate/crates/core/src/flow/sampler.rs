//! Whole-trajectory samplers built from the single-step kernels.

use super::kernels::{ode_step, sde_step};
use super::schedule::{SdeConfig, TimeGrid};
use crate::error::Result;
use crate::nnet::VelocityModel;

/// Integrates the ODE over grid steps `from..to`, returning every state
/// after `x` (length `to - from`).
pub fn ode_segment<M: VelocityModel + ?Sized>(
    field: &M,
    class: usize,
    x: &[f64],
    grid: &TimeGrid,
    from: usize,
    to: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(to.saturating_sub(from));
    let mut cur = x.to_vec();
    for i in from..to {
        cur = ode_step(field, &cur, grid.t(i), grid.dt(), class)?;
        states.push(cur.clone());
    }
    Ok(states)
}

/// Deterministic sample from initial noise `x`.
pub fn sample_ode<M: VelocityModel + ?Sized>(
    field: &M,
    class: usize,
    x: &[f64],
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    Ok(ode_segment(field, class, x, grid, 0, grid.steps)?
        .pop()
        .unwrap_or_else(|| x.to_vec()))
}

/// Stochastic sample with the SDE kernel at every step, using layer 1 noise
/// scaling and `noise(step)` as the standard normal draw of each step.
pub fn sample_sde<M: VelocityModel + ?Sized>(
    field: &M,
    class: usize,
    x: &[f64],
    grid: &TimeGrid,
    cfg: &SdeConfig,
    noise: impl Fn(usize) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let mut cur = x.to_vec();
    for i in 0..grid.steps {
        cur = sde_step(field, &cur, grid.t(i), grid.dt(), 1, &noise(i), class, cfg)?.x_next;
    }
    Ok(cur)
}
