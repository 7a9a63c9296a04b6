use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("input too short: need at least {min} frames, got {got}")]
    InputTooShort { min: usize, got: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(
        "infeasible alignment: target of length {target_len} with {repeats} adjacent \
         repeats cannot fit in {frames} frames"
    )]
    InfeasibleAlignment {
        target_len: usize,
        repeats: usize,
        frames: usize,
    },

    #[error("undefined rate: reference token count is zero")]
    UndefinedRate,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
