use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid physical configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The Gaussian exponent of a slit packet could not be represented.
    #[error("packet amplitude underflow at y = {coordinate:e}")]
    AmplitudeUnderflow { coordinate: f64 },

    #[error(
        "quadrature did not converge: {regions} regions, estimate {value:e} ± {error_estimate:e} \
         (target {target:e})"
    )]
    QuadratureNonConvergence {
        regions: usize,
        value: f64,
        error_estimate: f64,
        target: f64,
    },

    #[error("wavefunction is not normalizable (norm integral {norm:e})")]
    Degenerate { norm: f64 },

    /// |psi|^2 fell below the node threshold; the guidance velocity is not trusted there.
    #[error("configuration ({y1}, {y2}) at t = {t} lies at a wavefunction node")]
    NodeProximity { y1: f64, y2: f64, t: f64 },

    #[error("rejection sampler acceptance {acceptance:e} after {attempts} attempts: {detail}")]
    ProposalMisfit {
        acceptance: f64,
        attempts: u64,
        detail: String,
    },

    #[error("fringe positions are undefined for slit offset Y = 0")]
    UndefinedFringe,

    #[error("statistic is undefined on an empty record set")]
    EmptyRecords,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
