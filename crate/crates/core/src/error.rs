use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("splitting rate beta={beta} must exceed death rate mu={mu}")]
    SubcriticalOrCritical { beta: f64, mu: f64 },

    #[error("{name} must be strictly positive, got {value}")]
    NonpositiveRate { name: &'static str, value: f64 },

    #[error("diffusion coefficient kappa must be nonnegative, got {0}")]
    NegativeDiffusion(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid splitting kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel support gap a=0 lets theta approach 1; {0} requires a > 0")]
    DegenerateKernel(&'static str),

    #[error("live population exceeded cap {cap} at t={t}{}", replicate.map(|r| format!(" (replicate {r})")).unwrap_or_default())]
    PopulationCap {
        cap: usize,
        t: f64,
        replicate: Option<usize>,
    },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("insufficient tail data: {usable} grid points with >= {min_hits} hits, need 3")]
    InsufficientTailData { usable: usize, min_hits: u64 },

    #[error("time step {dt} exceeds stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("density front undefined at t={t}: {reason}")]
    FrontUndefined { t: f64, reason: String },

    #[error("ODE integration failed: {0}")]
    IntegrationFailure(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
