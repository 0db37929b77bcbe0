use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too small for a three-point stencil: {nx}x{ny} (need at least 3x3)")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("linear solve did not converge: relative residual {residual:e}")]
    LinearSolve { residual: f64 },

    #[error("non-finite value in {field} at t = {time}")]
    NonFinite { field: &'static str, time: f64 },

    #[error("clipped negative density {clipped:e} exceeds tolerance of total mass {total:e}")]
    ClippedMass { clipped: f64, total: f64 },

    #[error("kinetic speed adaptation failed: lambda = {0}")]
    LambdaAdaptation(f64),

    #[error("agent {agent} left the domain at ({x}, {y})")]
    AgentEscape { agent: usize, x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
