use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path} at byte {offset}: {msg}")]
    Parse { path: PathBuf, offset: u64, msg: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },

    #[error("non-finite parameter in gaussian {index}")]
    NonFiniteGaussian { index: usize },

    #[error("numerical abort in scene {scene_id} at step {step}: {msg}")]
    Numerical { scene_id: String, step: usize, msg: String },

    #[error("empty cloud: {0}")]
    EmptyCloud(&'static str),

    #[error("unknown model parameter {0:?}")]
    UnknownParam(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
