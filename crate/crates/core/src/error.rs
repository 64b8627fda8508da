use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("point {value} outside the kernel domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two successive refinements disagree by more than the tolerance.
    #[error("quadrature did not converge: coarse={coarse:e}, fine={fine:e}")]
    Quadrature { coarse: f64, fine: f64 },

    /// The integral grows without bound (or overflows) as the tail is extended.
    #[error("integral diverges: {reason} (last estimates {coarse:e}, {fine:e})")]
    Divergence {
        reason: String,
        coarse: f64,
        fine: f64,
    },

    #[error("ill-conditioned grid on [{left}, {right}]: exponential gap {gap:e} below {threshold:e}")]
    Conditioning {
        left: f64,
        right: f64,
        gap: f64,
        threshold: f64,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),
}
