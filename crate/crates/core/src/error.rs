use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// Variants are grouped so a driver can map them onto exit codes:
/// [`Error::is_numeric`] picks out failures of the numerical core, everything
/// else is a data or configuration problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: row {row}, field `{field}`: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        field: String,
        message: String,
    },

    #[error("unknown {kind} token `{token}` (allowed: {allowed})")]
    UnknownToken {
        kind: &'static str,
        token: String,
        allowed: String,
    },

    #[error("{path}: {message}")]
    Landmarks { path: PathBuf, message: String },

    #[error("landmark count mismatch: expected {expected}, found {actual}")]
    LandmarkCount { expected: usize, actual: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("triangulation failed: {0}")]
    Triangulation(String),

    #[error("no variance in training data: {0}")]
    ZeroVariance(String),

    #[error("insufficient rank: {0}")]
    Rank(String),

    #[error("training diverged at iteration {iteration}; try a smaller learning rate")]
    Diverged { iteration: usize },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("training set for {task} has a single class `{label}`")]
    SingleClass { task: String, label: String },

    #[error("model bundle: {0}")]
    Bundle(String),

    #[error("model bundle version mismatch: file has version {found}, this build reads version {expected}")]
    BundleVersion { expected: u32, found: u32 },

    #[error("task mismatch: expected a {expected} model, found {found}")]
    TaskMismatch { expected: String, found: String },

    #[error("missing model head: {0}")]
    MissingHead(String),

    #[error("corpus spec: {0}")]
    CorpusSpec(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical core (divergence, rank loss,
    /// degenerate eigen-problems) as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::ZeroVariance(_) | Error::Rank(_)
        )
    }
}
