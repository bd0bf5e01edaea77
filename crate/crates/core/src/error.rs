use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid streamline: {0}")]
    InvalidStreamline(String),

    #[error("point count mismatch: {left} vs {right}")]
    PointCountMismatch { left: usize, right: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite values after {0}")]
    NonFinite(String),

    #[error("degenerate projection: pre-normalization vector has zero length (item {0})")]
    DegenerateProjection(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("shape mismatch in block `{block}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        block: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("missing block `{0}`")]
    MissingBlock(String),

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("point ({0}, {1}, {2}) lies outside the heatmap grid")]
    OutsideGrid(f64, f64, f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
