use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {name} = {value} is outside {allowed}")]
    Domain {
        name: &'static str,
        value: f64,
        allowed: String,
    },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("threshold resonance: {0}")]
    Resonance(String),

    #[error("pairing is not integrable: combined rate {0} has nonpositive real part")]
    NonIntegrable(Complex64),

    #[error("singular resolvent at lambda = {lambda} (|W| = {w_abs:.3e})")]
    SingularResolvent { lambda: Complex64, w_abs: f64 },

    #[error("ill-conditioned evaluation: {0}")]
    Conditioning(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("integrator failure at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("sign anomaly: {0}")]
    SignAnomaly(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. } | Error::Regime(_) | Error::Resonance(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn domain(name: &'static str, value: f64, allowed: impl Into<String>) -> Self {
        Error::Domain {
            name,
            value,
            allowed: allowed.into(),
        }
    }
}
