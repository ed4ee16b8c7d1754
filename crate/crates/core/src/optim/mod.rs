//! Per-scene optimizers: SGD and Adam with per-group learning rates, the
//! Adam-style gradient normalization fed to the learned model, and the
//! schedule components of the learned-optimizer baseline.

mod adam;
mod schedule;

pub use adam::{
    adam_direction, adam_normalize, adam_step, sgd_step, AdamHyper, AdamState, GroupLrs, MeansSchedule,
    ParamGroupConfig,
};
pub use schedule::{cosine_lr, g3r_normalize, time_encoding, TimeInput, COSINE_OFFSET, TIME_FREQS};
