use thiserror::Error;

/// Errors produced by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    /// Inputs that make a normalizer or weight vanish.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("objective increased at iteration {iter}: {previous:.6e} -> {current:.6e}")]
    Divergence {
        iter: usize,
        previous: f64,
        current: f64,
    },

    #[error("too many speakers for exhaustive search: {0} (max 8)")]
    TooManySpeakers(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Singular(_) | Error::NonFinite(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Wav(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::GeometryMismatch(msg.into())
}
