use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: [{min}, {max}] must satisfy min < max")]
    InvalidDomain { min: f64, max: f64 },
    #[error("invalid grid size {0}: must be at least 1")]
    InvalidGrid(usize),
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("invalid spline: {0}")]
    InvalidSpline(String),
    #[error("basis index {index} out of range (num_basis = {num_basis})")]
    IndexOutOfRange { index: usize, num_basis: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("cannot insert block: network already has {0} blocks (max_blocks)")]
    MaxBlocksExceeded(usize),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("empty dataset split")]
    EmptyDataset,
    #[error("mask dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("both masks are empty; overlap metric undefined")]
    BothEmpty,
    #[error("mask is empty; Hausdorff distance undefined")]
    EmptyMask,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("too few cases: {n_cases} cases cannot form {k} folds")]
    TooFewCases { n_cases: usize, k: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file {0}")]
    TruncatedFile(PathBuf),
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
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
