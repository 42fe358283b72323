use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("incompatible parameters: expected spec {expected}, found {found}")]
    IncompatibleParameters { expected: String, found: String },
    #[error("shape mismatch for block `{block}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        block: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing block `{0}`")]
    MissingBlock(String),
    #[error("frozen block `{0}` differs between tuned and base parameters")]
    FrozenBlockViolation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unknown decade {0}")]
    UnknownDecade(u16),
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("artifact {path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// True for failures caused by bad user input rather than numerics or internals.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::IncompatibleParameters { .. }
                | Error::ShapeMismatch { .. }
                | Error::MissingBlock(_)
                | Error::EmptyDataset(_)
                | Error::UnknownDecade(_)
                | Error::Backend(_)
                | Error::InvalidInput(_)
                | Error::Artifact { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Image(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
