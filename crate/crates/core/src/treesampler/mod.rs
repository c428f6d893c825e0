//! Sliding-window trajectory trees, flat group samplers and NFE accounting.

pub mod group;
pub mod nfe;
pub mod tree;
pub mod window;

pub use group::{pairwise_dispersion, rollout_independent, GroupRollout, LeafPath};
pub use nfe::{nfe_exact, nfe_naive, nfe_prefix_bound, nfe_report, nfe_report_csv, CountingModel, NfeRow};
pub use tree::{path_at_layer, rollout_tree, TrajectoryTree, TreeId, TreeNode};
pub use window::{advance_window, WindowSchedule, WrapMode};
