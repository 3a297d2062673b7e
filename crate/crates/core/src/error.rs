use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel singularity at {0}")]
    KernelSingularity(f64),
    #[error("density singularity at the origin")]
    DensitySingularity,
    #[error("f is not a function in white mode")]
    NotAFunction,
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("energy divergence: {0}")]
    EnergyDivergence(String),
    #[error("not positive semidefinite: min eigenvalue {min_eig:e}, allowed slack {slack:e}")]
    NotPsd { min_eig: f64, slack: f64 },
    #[error("no admissible M up to {0}")]
    NoAdmissibleM(f64),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
