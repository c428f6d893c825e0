//! The training objective and the iteration that optimizes it.

pub mod batch;
pub mod clip;
pub mod loss;
pub mod train;

pub use batch::GroupBatch;
pub use clip::{dynamic_epsilon, ClipConfig};
pub use loss::{
    clipped_surrogate, fused_loss, grpo_tree_loss, sft_loss_against, sft_prm_loss, sft_targets, FusedStats, FusionConfig, GrpoStats,
};
pub use train::{IterationMetrics, RlSetup, Trainer, Variant, METRICS_HEADER};
