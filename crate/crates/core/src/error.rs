//! Error type shared by all reconstruction stages.

use thiserror::Error;

/// Errors produced by grid operations, solvers and reconstruction pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid error: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("excluded exponent: (n-2)*alpha+1 = 0 for n = {n}, alpha = {alpha}")]
    ExcludedAlpha { n: usize, alpha: f64 },

    #[error("positivity violated at node ({i}, {j}): det H = {det:.3e}")]
    Positivity { i: usize, j: usize, det: f64 },

    #[error("{context}: solver did not converge after {iters} iterations (residual {residual:.3e}, min det H {min_det:.3e})")]
    SolverDiverged {
        context: String,
        iters: usize,
        residual: f64,
        min_det: f64,
    },

    #[error("perturbation destroys positivity: min det {after:.3e} < half of {before:.3e}")]
    NoiseBreaksPositivity { before: f64, after: f64 },

    #[error("frame is not orthonormal: defect {defect:.3e} exceeds {tol:.1e}")]
    NotOrthonormal { defect: f64, tol: f64 },

    #[error("seed frame inconsistent with data at the seed point: defect {defect:.3e}")]
    SeedInconsistent { defect: f64 },

    #[error("frame norm {norm:.3e} exceeds a-priori bound {bound:.3e} at node ({i}, {j}); data inconsistent or exponent excluded")]
    FrameBlowup {
        norm: f64,
        bound: f64,
        i: usize,
        j: usize,
    },

    #[error("boundary angle cannot be unwrapped: winding number {winding} after one loop")]
    BoundaryWinding { winding: i64 },

    #[error("recovered power {name} is non-positive on {fraction:.2}% of nodes; inconsistent data or wrong exponent")]
    NonPositivePower { name: String, fraction: f64 },

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown phantom '{0}'")]
    UnknownPhantom(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
