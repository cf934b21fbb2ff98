use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// The thermal model cannot complete a cycle (a log argument would be non-positive).
    #[error("infeasible thermal cycle: {0}")]
    Infeasible(String),

    #[error("step size {dt} s exceeds the limit {limit} s (one tenth of the shortest ON/OFF phase)")]
    StepSize { dt: f64, limit: f64 },

    #[error("population is empty")]
    EmptyPopulation,

    #[error("consensus step h = {h} s violates the Euler stability bound h < {bound} s (2 / largest Laplacian eigenvalue)")]
    Stability { h: f64, bound: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is outside its domain")]
    Domain(String),

    #[error("spectrum has no usable peak: {0}")]
    Resolution(String),

    #[error("division by a zero baseline in {0}")]
    ZeroBaseline(&'static str),

    #[error("degenerate scaler: column is constant at {0}")]
    DegenerateScaler(f64),

    #[error("model is corrupt: {0}")]
    ModelCorrupt(String),
}
