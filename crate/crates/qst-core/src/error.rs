//! Error type shared across the crate.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("{context}: matrix not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { context: &'static str, min_eig: f64 },

    #[error("invalid parameter {name} = {value}: expected {expected}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("Fock index {index} does not fit below cutoff {dim}")]
    CutoffViolation { index: usize, dim: usize },

    #[error("projection removed all amplitude (remaining norm {norm:.3e})")]
    DegenerateProjection { norm: f64 },

    #[error("state norm {norm:.3e} too small to normalize")]
    DegenerateState { norm: f64 },

    #[error("no coefficient table entry matches n_bar = {0}")]
    MissingCoefficient(f64),

    #[error("sampling for family {family} rejected {attempts} consecutive draws")]
    SamplingFailure {
        family: &'static str,
        attempts: usize,
    },

    #[error("factor trace {trace:.3e} too small to normalize")]
    DegenerateTrace { trace: f64 },

    #[error("split-layer trace {trace:.3e} is within 1e-9 of zero")]
    NearSingularNormalization { trace: f64 },

    #[error("projection failure: no positive eigenvalues to keep")]
    ProjectionFailure,

    #[error("normal equations ill-conditioned at ridge {ridge:.3e}; increase the ridge")]
    IllConditioned { ridge: f64 },

    #[error("likelihood underflow: probability at grid point {index} below 1e-300")]
    LikelihoodUnderflow { index: usize },

    #[error("divergence at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("shape mismatch in {primitive}: {detail}")]
    ShapeMismatch {
        primitive: &'static str,
        detail: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("non-Hermitian operator (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(&'static str),

    #[error("checkpoint mode mismatch: expected {expected}, found {found}")]
    CheckpointMismatch { expected: String, found: String },

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("unsupported format version: {0}")]
    UnsupportedFormat(String),

    #[error("dataset inconsistency: {0}")]
    Inconsistency(String),

    #[error("class {class} has too few records to stratify")]
    Stratification { class: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
