use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coefficient vector is empty")]
    EmptyCoefficients,

    #[error("last autoregressive coefficient is zero; the order is not exact")]
    ZeroLeadCoefficient,

    #[error("innovation variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("coefficients are not stationary: companion spectral radius {spectral_radius} >= 1 - tol")]
    NonStationary { spectral_radius: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Yule-Walker system is singular")]
    SingularYuleWalker,

    #[error("population covariance matrix of order {k} is numerically singular")]
    SingularGamma { k: usize },

    #[error("sample moment matrix of order {k} is numerically singular (condition estimate {condition:e})")]
    SingularMoment { k: usize, condition: f64 },

    #[error("singular fit at step {step} after the start index {start}")]
    SingularAfterStart { step: usize, start: usize },

    #[error("autocovariance table covers lag {available}, lag {needed} required")]
    InsufficientLags { needed: usize, available: usize },

    #[error("horizon {h} is degenerate: the optimal predictor is identically zero")]
    DegenerateHorizon { h: usize },

    #[error("order {k} is below the minimal correct order {min}")]
    UnderspecifiedOrder { k: usize, min: usize },

    #[error("value {value} outside the domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },

    #[error("{needed} observations required, {got} available")]
    TooFewObservations { needed: usize, got: usize },

    #[error("no valid start index for horizon {h} and maximal order {k_max} in a series of length {n}")]
    NoValidStart { h: usize, k_max: usize, n: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("subset search over {k_max} lags exceeds the cap of {cap}")]
    SubsetTooLarge { k_max: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("replication {rep} failed after {attempts} draws: {source}")]
    ReplicationFailed {
        rep: usize,
        attempts: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularYuleWalker
                | Error::SingularGamma { .. }
                | Error::SingularMoment { .. }
                | Error::SingularAfterStart { .. }
                | Error::DegenerateHorizon { .. }
                | Error::TooFewObservations { .. }
                | Error::NoValidStart { .. }
                | Error::ReplicationFailed { .. }
        )
    }
}
