use thiserror::Error;

/// Errors across the kinematics, set-arithmetic, tube-synthesis and
/// optimal-control layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Euler-rate transform evaluated with the pitch at (or numerically
    /// indistinguishable from) ±π/2.
    #[error("singular orientation: |cos(pitch)| = {0:.3e} is below tolerance")]
    SingularOrientation(f64),

    /// Euler extraction from a rotation matrix hit pitch ±π/2.
    #[error("gimbal lock: extracted pitch within tolerance of ±π/2 (|r31| = {0:.12})")]
    GimbalLock(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported set combination: {0}")]
    UnsupportedCombination(&'static str),

    /// A Pontryagin difference ate the whole set: the tube cross-section is
    /// larger than the constraint margin.
    #[error("empty set result: {0}")]
    EmptyResult(String),

    #[error("infeasible tube gains: {0}")]
    InfeasibleGains(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("linearized pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    /// The composite input ū + κ left the input constraint set. This
    /// falsifies the tube premise upstream and is never silently saturated.
    #[error("input constraint violation: {0}")]
    InputConstraintViolation(String),

    /// A deviation left its invariant ball; the run aborts rather than
    /// masking the broken premise.
    #[error("tube violation: {0}")]
    TubeViolation(String),

    /// The finite-horizon optimal control problem admits no feasible point.
    #[error("FHOCP infeasible: max constraint violation {max_violation:.3e} at stage `{stage}`")]
    Infeasible { max_violation: f64, stage: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("closed-loop run aborted at t = {t:.3}s during {stage}: {source}")]
    RunAborted {
        t: f64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
