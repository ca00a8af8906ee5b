use thiserror::Error;

/// Errors produced by the preprocessing, learning and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid wavenumber axis: {0}")]
    InvalidAxis(String),

    #[error("band {high}-{low} cm-1 lies outside the axis range {start}-{end} cm-1")]
    BandOutsideAxis {
        high: f64,
        low: f64,
        start: f64,
        end: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("backward called before forward on layer `{0}`")]
    NoForwardCache(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by non-finite or diverging arithmetic.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
