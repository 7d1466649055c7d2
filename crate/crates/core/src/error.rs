use std::path::PathBuf;

/// Every failure the pipeline can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid dropout rate {0} (must lie in [0, 1))")]
    InvalidRate(f32),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("incompatible architecture: expected fingerprint {expected:016x}, found {found:016x}")]
    IncompatibleArchitecture { expected: u64, found: u64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("day {0} is outside the 1..=28 ripening schedule")]
    DayOutOfRange(u32),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("{found} samples is too few to split (need at least {min})")]
    TooFewSamples { found: usize, min: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::io(path, source)
}
