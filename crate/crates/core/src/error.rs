use thiserror::Error;

pub type Result<T> = std::result::Result<T, PmgaError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmgaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Gram matrix T^T T is numerically singular (det = {det:e})")]
    SingularGram { det: f64 },

    #[error("latent point {point:?} lies outside the {domain} domain")]
    OutOfDomain { point: Vec<f64>, domain: &'static str },

    #[error("parameter index {index} out of range (dimension {dim})")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("closed loop is not discounted-stable: spectral radius of sqrt(gamma)(I+K) is {radius}")]
    Unstable { radius: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("indicator {0} requires the return Jacobian")]
    MissingDerivatives(&'static str),

    #[error("reference point has zero norm")]
    ZeroReference,

    #[error("policy is not Gaussian: {0}")]
    NonGaussianPolicy(String),

    #[error("unknown map identifier `{0}`")]
    UnknownMap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PmgaError {
    fn from(e: std::io::Error) -> Self {
        PmgaError::Io(e.to_string())
    }
}
