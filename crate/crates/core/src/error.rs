use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e}, largest {max_eig:e}")]
    NonPsd { min_eig: f64, max_eig: f64 },

    #[error("propagator step too large: error estimate {err_est:e} exceeds {tol:e} after refinement")]
    StepTooLarge { err_est: f64, tol: f64 },

    #[error("no exponential stability certificate: {0}")]
    NotStable(String),

    #[error("propagator norm {norm:e} exceeds {bound} at lag {lag} from base point {base}")]
    Unstable { norm: f64, bound: f64, base: f64, lag: f64 },

    #[error("path diverged at t = {t}: |x| = {value:e}")]
    Diverged { t: f64, value: f64 },

    #[error("window too short: need {needed} time units, have {available}")]
    WindowTooShort { needed: f64, available: f64 },

    #[error("inconclusive: infimum {c:e} of the L2 increment is not above tolerance {tol:e}")]
    Inconclusive { c: f64, tol: f64 },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
