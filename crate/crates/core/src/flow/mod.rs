//! Flow-matching pretraining and the ODE/SDE transition kernels.

pub mod kernels;
pub mod pretrain;
pub mod sampler;
pub mod schedule;

pub use kernels::{
    ode_step, sde_coeffs, sde_mean, sde_step, transition_logpdf, SdeCoeffs, SdeOutput, Transition,
};
pub use pretrain::{cfm_loss, cfm_pretrain_loss, draw_cfm_samples, pretrain, CfmSample, PretrainConfig};
pub use sampler::{ode_segment, sample_ode, sample_sde};
pub use schedule::{kernel_sigma, noise_scale, sigma, SdeConfig, TimeGrid};
