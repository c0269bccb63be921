use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: n_points = {n}, need at least {min}")]
    GridTooCoarse { n: usize, min: usize },

    #[error("matrix field generator returned an asymmetric matrix at grid point {index} (asymmetry {asymmetry:.3e} > {tolerance:.3e})")]
    AsymmetricField {
        index: usize,
        asymmetry: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric: max |M - Mᵀ| = {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("eigensolver failed to converge (worst residual {worst_residual:.3e})")]
    SolverFailure { worst_residual: f64 },

    #[error("vector is not unit-normalized in the weighted product: ‖ψ‖ = {norm}")]
    NotNormalized { norm: f64 },

    #[error("invalid parameter grid: {0}")]
    InvalidTGrid(String),

    #[error("insufficient samples: need {needed}, have {got} ({context})")]
    InsufficientSamples {
        needed: usize,
        got: usize,
        context: &'static str,
    },

    #[error("operation requires a scalar potential, but the family has a matrix-valued one")]
    ScalarPotentialRequired,

    #[error("unknown function spec `{0}` (expected cos, sin2, zero, const:c, cos_shift:phi or poly_trig:a0,a1,b1,a2)")]
    UnknownFunction(String),

    #[error("{path}: {message}")]
    Scenario { path: String, message: String },

    #[error("sweep parameter `{0}` is not one of n_points, t_max, k")]
    UnknownSweepParameter(String),

    #[error("sweep values list is empty")]
    EmptySweep,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }
}
