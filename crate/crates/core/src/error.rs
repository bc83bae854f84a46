use thiserror::Error;

/// Errors shared by every module of the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("local series anchors do not match")]
    MismatchedAnchors,
    #[error("division by a series that is zero to truncation order")]
    ZeroDivisor,
    #[error("truncation order too short: {0}")]
    TruncationTooShort(String),
    #[error("coordinate change is not invertible (vanishing first derivative)")]
    NonInvertibleChange,
    #[error("expansion at a pole of an unreduced representation: {0}")]
    UnreducedPole(String),
    #[error("root finder failed to converge (residual {residual:e})")]
    RootFinder { residual: f64 },
    #[error("no such differential: linear system inconsistent (residual {residual:e})")]
    InconsistentSystem { residual: f64 },
    #[error("residue-theorem obstruction: moment differs from lambda*d by {excess:e}")]
    MomentViolation { excess: f64 },
    #[error("singular matrix in {0}")]
    SingularMatrix(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("divisor is Q-special (dim Q_u = {dim})")]
    QSpecial { dim: usize },
    #[error("operation requires lambda != 0")]
    LambdaZero,
    #[error("non-simple zero of omega_plus at x = {at}")]
    NonSimpleZero { at: String },
    #[error("stencil evaluation failed along {direction}: {source}")]
    Stencil {
        direction: String,
        #[source]
        source: Box<Error>,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
