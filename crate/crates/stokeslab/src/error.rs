//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("leading coefficient vanishes after simplification")]
    ZeroLeadingCoefficient,

    #[error("expression does not contain D or delta")]
    NotAnOperator,

    #[error("series evaluation at z = 0 is undefined")]
    EvalAtZero,

    #[error("factor recursion exceeded depth {0}; raise max_depth")]
    DepthExceeded(usize),

    #[error("coefficient recursion is singular at step {step}: {msg}")]
    RecursionSingular { step: usize, msg: String },

    #[error("coefficient singularity on the integration path near z with |z| = {radius}")]
    PathSingular { radius: f64 },

    #[error("step size underflow during integration at |z| = {radius}")]
    StepUnderflow { radius: f64 },

    #[error(
        "asymptotic expansions do not separate at radius {radius} (gap {gap:.3e} < {required:.3e}); increase the matching radius or the truncation order"
    )]
    SeparationFailed { radius: f64, gap: f64, required: f64 },

    #[error("change of basis inconsistent across the radius chain (residual {residual:.3e})")]
    BasisInconsistent { residual: f64 },

    #[error("overlap half-width {half_width} exceeds half of the minimal direction gap {gap}")]
    OverlapTooWide { half_width: f64, gap: f64 },

    #[error("Stokes matrix set is invalid: {0}")]
    InvalidStokesSet(String),

    #[error("domains live on incompatible charts")]
    IncompatibleCharts,

    #[error("domain is disconnected or empty; only connected domains are supported")]
    DisconnectedDomain,

    #[error("{0}")]
    Unsupported(String),
}
