use thiserror::Error;

/// Errors raised by problem definitions, geometry, discretization and solvers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("control set is empty")]
    EmptyControlSet,

    #[error("control set asserts 0 ∈ A but contains no zero vector")]
    MissingZeroControl,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate level set: |∇g| < {min_grad:e} at {location:?}")]
    DegenerateLevelSet { min_grad: f64, location: Vec<f64> },

    #[error("normal undefined at {location:?} (corner/edge point; perturb the query)")]
    NormalUndefined { location: Vec<f64> },

    #[error("domain under-resolved: grid with h={h} has no {what}")]
    UnderResolved { h: f64, what: &'static str },

    #[error("monotonicity violated at node {node} control {control}: axis pair ({axis_a},{axis_b}), |cross|={cross:e} > min diag {diag:e}")]
    MonotonicityViolated {
        node: usize,
        control: usize,
        axis_a: usize,
        axis_b: usize,
        cross: f64,
        diag: f64,
    },

    #[error("boundary node {node} at {location:?} has no admissible control stencil")]
    NoAdmissibleControl { node: usize, location: Vec<f64> },

    #[error("domain not viable under control sample; worst nodes: {worst:?}")]
    NotViable { worst: Vec<(Vec<f64>, f64)> },

    #[error("grid mismatch between value functions / operator")]
    GridMismatch,

    #[error("initial state lies outside the constraint set: {location:?}")]
    StartOutsideDomain { location: Vec<f64> },

    #[error("checkpoint {t} exceeds simulation horizon {horizon}")]
    CheckpointBeyondHorizon { t: f64, horizon: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
