use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadratic form is not positive semidefinite (smallest eigenvalue {min_eig:.3e})")]
    NonPsdQuadratic { min_eig: f64 },
    #[error("density is not integrable: {0}")]
    UnboundedDensity(String),
    #[error("invalid measure specification: {0}")]
    InvalidSpec(String),
    #[error("flag `{flag}` could not be certified: {detail}")]
    FlagNotCertified { flag: &'static str, detail: String },
    #[error("quadrature limited to dimension <= 3, got {0}; use the sampling module")]
    DimensionTooLarge(usize),
    #[error("density vanishes inside the computational domain at {0:?}")]
    SingularWeight(Vec<f64>),
    #[error("window growth did not converge: relative change {change:.3e} > tolerance {tolerance:.3e}")]
    NotConverged { change: f64, tolerance: f64 },
    #[error("density is not normalized")]
    NotNormalized,
    #[error("grid too large: estimated {bytes} bytes for {rows} rows")]
    OutOfMemory { rows: usize, bytes: usize },
    #[error("eigensolver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("function is not centered: mean {0:.3e}")]
    NotCentered(f64),
    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),
    #[error("hessian is not positive definite at {0:?}")]
    HessianNotPd(Vec<f64>),
    #[error("spectrum too short: {0}")]
    InsufficientSpectrum(String),
    #[error("symmetry does not map the grid to itself: {0}")]
    GroupDoesNotPreserveGrid(String),
    #[error("density underflows at t = {0}")]
    DensityUnderflow(f64),
    #[error("test function is not odd (residual {0:.3e})")]
    FNotOdd(f64),
    #[error("chain diverged at step {0}")]
    DivergentChain(usize),
    #[error("chord endpoint search failed along direction {0:?}")]
    ChordNotFound(Vec<f64>),
    #[error("too few samples: {0} < 1000")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unknown formula `{0}`")]
    UnknownFormula(String),
    #[error("bad parameters for `{formula}`: {detail}")]
    BadParams { formula: String, detail: String },
    #[error("invalid configuration at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
