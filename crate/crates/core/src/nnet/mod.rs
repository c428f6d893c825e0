//! Conditional MLP velocity field, exact reverse-mode gradients, AdamW.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use mlp::{Activation, MlpConfig, VelocityField};
pub use optim::{optimizer_step, AdamState, AdamW};
pub use params::{LayoutEntry, ParamVector};

use crate::error::Result;

/// Anything that can act as `v(x, t, c)` and back-propagate through it.
///
/// Implemented by [`VelocityField`]; tests provide wrappers that count or
/// perturb evaluations.
pub trait VelocityModel: Sync {
    fn state_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn num_params(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64, class: usize) -> Result<Vec<f64>>;
    /// Adds `upstream^T dv/dtheta` into `grad`.
    fn accumulate_vjp(
        &self,
        x: &[f64],
        t: f64,
        class: usize,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()>;
}
