use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (asymmetry {defect:e})")]
    NotSymmetric { defect: f64 },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite entry in input")]
    NonFinite,

    #[error("point is not feasible: ||X^T A X - J||_F = {residual:e}")]
    Infeasible { residual: f64 },

    #[error("matrix is not tangent at the point: ||sym(X^T A xi)||_F = {defect:e}")]
    NotTangent { defect: f64 },

    #[error("invalid manifold definition: {0}")]
    InvalidSpec(String),

    #[error("tangent vectors are anchored at different points")]
    AnchorMismatch,

    #[error("metric has no closed-form inverse")]
    NoClosedFormInverse,

    #[error("this operation requires the Canonical1 or Canonical2 metric")]
    UnsupportedMetric,

    #[error("point is outside the open set of full-rank X with invertible X^T A X")]
    OutsideAmbientSet,

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("not a descent direction (slope {slope:e})")]
    AscentDirection { slope: f64 },

    #[error("line search found no acceptable step after {halvings} halvings")]
    LineSearchFailed { halvings: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}
