use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("time t={t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("singular time factor: t={t} >= t_max={t_max}")]
    Singularity { t: f64, t_max: f64 },

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("degenerate gradient: norm below {threshold:e}")]
    DegenerateGradient { threshold: f64 },

    #[error("stale activation cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
