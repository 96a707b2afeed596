use thiserror::Error;

/// Every failure mode surfaced by the library.
///
/// Grid locations are reported as flat indices together with their
/// multi-index so callers can point at the offending sample.
#[derive(Debug, Error)]
pub enum FrameError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix at k-index {k:?} is not Hermitian (defect {defect:e})")]
    NotHermitian { k: Vec<usize>, defect: f64 },

    #[error("family is not a projection at k-index {k:?} (idempotency defect {defect:e})")]
    NotProjection { k: Vec<usize>, defect: f64 },

    #[error("rank changes across the grid: {found} at k-index {k:?}, expected {expected}")]
    RankNotConstant { k: Vec<usize>, expected: usize, found: usize },

    #[error("spectral gap too small at k-index {k:?}: {gap:e} < {required:e}")]
    GapTooSmall { k: Vec<usize>, gap: f64, required: f64 },

    #[error("matrix is not positive definite at k-index {k:?} (min eigenvalue {min_eig:e})")]
    NotPositive { k: Vec<usize>, min_eig: f64 },

    #[error("series needs norm < 1 but got {norm:e}")]
    SeriesDivergent { norm: f64 },

    #[error("grid too coarse along axis {axis}: phase step {step:.4} at k-index {k:?}")]
    GridTooCoarse { axis: usize, k: Vec<usize>, step: f64 },

    #[error("nonzero Chern number c[{i}{j}] = {value}; no periodic basis exists")]
    NonzeroChern { i: usize, j: usize, value: i64 },

    #[error("nonzero winding degree {degree} along axis {axis}")]
    NonzeroDegree { axis: usize, degree: i64 },

    #[error("degrees of the two unitary families differ along axis {axis}: {left} vs {right}")]
    DegreeMismatch { axis: usize, left: i64, right: i64 },

    #[error("eigenphase branch {branch} winds {winding} times along axis {axis}")]
    BranchWinding { axis: usize, branch: usize, winding: i64 },

    #[error("box radius {radius} exceeds aliasing bound {bound}")]
    Aliasing { radius: usize, bound: usize },

    #[error("magnetic hypothesis failed: {0}")]
    Hypothesis(String),

    #[error("iteration did not converge: {0}")]
    NotConverged(String),

    #[error("non-degenerate approximation failed: best gap {best_gap:e} < {required:e}")]
    NoGenericPerturbation { best_gap: f64, required: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FrameError> = std::result::Result<T, E>;
