use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcurvError {
    #[error("unsupported dimension {0}: expected 2 or 4")]
    InvalidDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {len} values but the grid has {expected} nodes")]
    LengthMismatch { len: usize, expected: usize },

    #[error("field was sampled on a different grid")]
    GridMismatch,

    #[error("non-finite value at node {0}")]
    NonFinite(usize),

    #[error("radii must be positive (s = {s}, r = {r})")]
    NonPositiveRadius { s: f64, r: f64 },

    #[error("kernel table with {nodes} nodes exceeds the configured cap of {limit}")]
    KernelTooLarge { nodes: usize, limit: usize },

    #[error("alpha = {alpha} lies outside the admissible interval ({lo}, {hi})")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },

    #[error("decay exponent l = {0} must be positive")]
    InvalidDecay(f64),

    #[error("prescribed curvature is non-positive at every node")]
    NonPositiveCurvature,

    #[error("curvature integral {0} is not positive; iterate left the admissible set")]
    NotAdmissible(f64),

    #[error("damping fell below the floor {0} without producing an admissible iterate")]
    DampingExhausted(f64),

    #[error("line search failed after {0} backtracking steps")]
    LineSearchFailed(usize),

    #[error("Hardy ratio needs k*p < n (k = {k}, p = {p}, n = {n})")]
    HardyExponent { k: usize, p: f64, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QcurvError>;
