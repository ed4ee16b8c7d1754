//! The learned optimizer: a kNN point transformer over per-Gaussian inputs
//! with recurrent latent states, a state-scale MLP, and a direction and
//! magnitude update head. The time-conditioned baseline shares the plumbing.

mod config;
mod network;

pub use config::{L2SConfig, ModelKind, HEAD_WIDTH};
pub use network::{
    apply_update, assemble_input, baseline_factor, forward_step, init_latents, init_model, l2s_step, lo_baseline_step,
    neighbors_for, point_transformer_forward, project_latents, state_scale_forward, update_head_forward,
    warm_start_columns, LatentStates, StepInputs, StepVars, UpdatePrediction, UpdateVars,
};

#[cfg(test)]
mod tests;
