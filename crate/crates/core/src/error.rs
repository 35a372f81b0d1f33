use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("degenerate patch: side {0} is smaller than 2")]
    DegeneratePatch(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("image {height}x{width} is smaller than one {patch}x{patch} patch")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported strategy {0} for this operation")]
    UnknownStrategy(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (lr {lr:e}, batch {batch:?})")]
    NonFiniteLoss {
        step: usize,
        lr: f64,
        batch: Vec<usize>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("render error: {0}")]
    Render(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Json(_) => 2,
            Error::MissingFile(_) => 3,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 1,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegeneratePatch(_) => "degenerate_patch",
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::Empty(_) => "empty",
            Error::UnknownStrategy(_) => "unknown_strategy",
            Error::Schema(_) => "schema",
            Error::MissingFile(_) => "missing_file",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Render(_) => "render",
        }
    }
}
