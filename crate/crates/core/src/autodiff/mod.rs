//! Reverse-mode differentiation over dense 2-D arrays, plus model parameter
//! containers, initialization, Adam and the model checkpoint format.

mod params;
mod tape;
mod tensor;

pub use params::{adam_step_params, Init, ModelCheckpoint, ModelParameters, ParamAdamState, ParamVars};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, UNIT_NORM_FLOOR};
pub use tensor::Tensor2;
