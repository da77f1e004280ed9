use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by graph, excitation, simulation and tuning routines.
///
/// Variants split into configuration problems (bad schedules, non-SPD gains,
/// invalid parameters) and domain outcomes (loss of connectivity, violated
/// excitation, infeasible tuning boxes). The CLI maps the former to exit
/// code 2 and the latter to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} precedes the first schedule interval")]
    TimeBeforeSchedule { t: f64 },

    #[error("invalid graph schedule: {0}")]
    InvalidSchedule(String),

    #[error("[{t0}, {t1}] is not a valid integration window")]
    BadWindow { t0: f64, t1: f64 },

    #[error(
        "graph is not connected on average: window ending at t = {t} has {zero_count} \
         near-zero eigenvalues of the integrated Laplacian"
    )]
    NotConnectedOnAverage { t: f64, zero_count: usize },

    #[error(
        "cooperative excitation violated: worst window ends at t = {t_worst} with \
         lambda_min = {lambda_min:.6e}"
    )]
    CpeViolated { t_worst: f64, lambda_min: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("state became non-finite at t = {t} (norm = {norm:.6e})")]
    NonFiniteState { t: f64, norm: f64 },

    #[error("gain block {index} is not symmetric positive definite: {reason}")]
    GainNotSpd { index: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Gramian lower bound not positive for these constants (iota2_lower = {value:.6e})")]
    BoundNotPositive { value: f64 },

    #[error("LMI infeasible in search box: best residual {residual:.6e}")]
    InfeasibleInBox { residual: f64 },

    #[error("Lyapunov sandwich violated: {0}")]
    SandwichViolation(String),

    #[error("performance metric undefined for (near-)zero disturbance energy")]
    ZeroDisturbance,

    #[error("data inconsistency: {0}")]
    DataInconsistency(String),

    #[error("non-PSD Gramian window at t0 = {t0}: lambda_min = {lambda_min:.6e}")]
    NonPsdWindow { t0: f64, lambda_min: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate a malformed configuration rather than a
    /// legitimate negative outcome of a computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidSchedule(_)
                | Error::GainNotSpd { .. }
                | Error::InvalidParameter(_)
                | Error::Json(_)
        )
    }
}
