//! Tree-structured group policy optimization for a conditional flow-matching
//! model on a 2-D Gaussian-mixture task.
//!
//! The crate is organised bottom-up: [`nnet`] holds the velocity network and
//! its optimizer, [`flow`] the pretraining loss and transition kernels,
//! [`treesampler`] the sliding-window trees, [`rewards`] and [`rlcore`] the
//! training objective, [`oracle`] the brute-force cross-checks and
//! [`harness`] the config and experiment drivers used by the CLI.

pub mod error;
pub mod flow;
pub mod harness;
pub mod io;
pub mod nnet;
pub mod oracle;
pub mod reduce;
pub mod rewards;
pub mod rlcore;
pub mod rng;
pub mod toy;
pub mod treesampler;

pub use error::{Error, Result};
pub use flow::{SdeConfig, TimeGrid};
pub use nnet::{MlpConfig, ParamVector, VelocityField, VelocityModel};
pub use rewards::{advantages, reward_channels, AdvantageSet, RewardReport};
pub use rlcore::{IterationMetrics, RlSetup, Trainer, Variant};
pub use rng::{NoiseKey, NoiseStream};
pub use toy::{Sample, ToyTask};
pub use treesampler::{TrajectoryTree, TreeId, WindowSchedule};
