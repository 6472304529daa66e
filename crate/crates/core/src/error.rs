use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positively stable (min real part of spectrum {min_real:.3e})")]
    NotStable { min_real: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix exponential argument out of range (norm {norm:.3e} > {limit:.1e})")]
    Overflow { norm: f64, limit: f64 },

    #[error("leading block is singular or ill-conditioned (condition number {cond:.3e})")]
    SingularBlock { cond: f64 },

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("grid is empty")]
    EmptyGrid,

    #[error("fast block is not positive definite at point {point:?} (min eigenvalue {min_eig:.3e})")]
    FastBlockNotPD { point: Vec<f64>, min_eig: f64 },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("simulation blew up on path {path} at step {step}")]
    SimulationBlowup { path: u64, step: usize },

    #[error("diffusion matrix is singular at {point:?}")]
    SingularA { point: Vec<f64> },

    #[error("quadrature tail estimate {estimate:.3e} exceeds tolerance")]
    QuadratureDivergence { estimate: f64 },

    #[error("sampler did not converge: {0}")]
    SamplerNotConverged(String),

    #[error("divergence check failed: max residual {residual:.3e}")]
    DivergenceCheck { residual: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
