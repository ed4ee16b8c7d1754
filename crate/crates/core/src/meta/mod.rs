//! Meta-training of the learned optimizer: truncated unrolls with a
//! checkpoint buffer, followed by frozen rollouts that push scenes further
//! along their optimization trajectories.

mod buffer;
mod config;
mod rollout;
mod train;

pub use buffer::{
    draw_push, draw_rollout, draw_start, draw_tau, simulate_buffer, BufferSimulation, Checkpoint, CheckpointBuffer,
    Start,
};
pub use config::{LvsReduction, MetaConfig, ViewPolicy};
pub use rollout::{
    inner_gradient, inner_rollout, meta_gradient, meta_loss_and_seeds, replay_meta_loss, InnerState, Rollout,
    RolloutMode, SceneViews, StepRecord, TargetErrors, TrainTrace,
};
pub use train::{checkpoint_path, iteration_rng, meta_iteration, read_metrics, MetricsLog, MetricsRow, Trainer};
