//! Finite-dimensional linear stochastic evolution equations
//! `dX = A(t) X dt + g(t) dW`, `Cov(dW) = Q dt`.
//!
//! The propagator `U(t, s)` solves `∂ₜU = A(t) U`, `U(s, s) = I`. Under
//! exponential stability the unique L²-bounded solution is the stochastic
//! convolution `X_t = ∫_{-∞}^t U(t, s) g(s) dW_s`, a centered Gaussian
//! process whose covariance follows from the Itô isometry.

mod convolution;
mod propagator;
mod stability;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::gp_core::OuParams;
use crate::linalg;
use crate::Real;

pub use convolution::{convolution_covariance, variance_condition, StochasticConvolution};
pub use propagator::{propagator, PropagatorEval};
pub use stability::{
    check_dissipativity, check_exponential_stability, check_exponential_stability_with, StabilityEstimate,
    StabilityGrid, StabilityOptions,
};

pub(crate) use propagator::extrapolated_step;

pub type MatrixFn<T> = Arc<dyn Fn(T) -> DMatrix<T> + Send + Sync>;

/// Tolerance on the smallest eigenvalue of `Q`.
const Q_EIG_TOL: f64 = 1e-12;

#[derive(Clone)]
pub struct EvolutionSystem<T: Real> {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    drift: MatrixFn<T>,
    noise: MatrixFn<T>,
    q: DMatrix<T>,
    period_hint: Option<T>,
}

impl<T: Real> fmt::Debug for EvolutionSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionSystem")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("period_hint", &self.period_hint.map(|p| p.as_f64()))
            .finish_non_exhaustive()
    }
}

impl<T: Real> EvolutionSystem<T> {
    /// `drift(t)` must be `d×d`, `noise(t)` `d×m` and `q` symmetric PSD `m×m`.
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(T) -> DMatrix<T> + Send + Sync + 'static,
        noise: impl Fn(T) -> DMatrix<T> + Send + Sync + 'static,
        q: DMatrix<T>,
        period_hint: Option<T>,
    ) -> Result<Self> {
        let a0 = drift(T::zero());
        let g0 = noise(T::zero());
        let d = a0.nrows();
        let m = q.nrows();
        if d == 0 || m == 0 {
            return Err(invalid("state and noise dimensions must be positive"));
        }
        if !a0.is_square() {
            return Err(invalid(format!("drift must be square, got {}x{}", d, a0.ncols())));
        }
        if !q.is_square() {
            return Err(invalid("noise covariance Q must be square"));
        }
        if g0.nrows() != d || g0.ncols() != m {
            return Err(invalid(format!(
                "noise coefficient must be {d}x{m}, got {}x{}",
                g0.nrows(),
                g0.ncols()
            )));
        }
        let scale = q.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
        if linalg::max_asymmetry(&q) > T::lit(Q_EIG_TOL) * scale {
            return Err(invalid("noise covariance Q must be symmetric"));
        }
        let eig = linalg::sym_eigen(&q);
        let (lo, _) = linalg::extreme_eigenvalues(&eig);
        if lo < -T::lit(Q_EIG_TOL) {
            return Err(crate::Error::NonPsd {
                min_eig: lo.as_f64(),
                max_eig: linalg::extreme_eigenvalues(&eig).1.as_f64(),
            });
        }
        if let Some(p) = period_hint {
            if !(p > T::zero() && p.is_finite()) {
                return Err(invalid("period hint must be positive"));
            }
        }
        Ok(Self {
            name: name.into(),
            dim_state: d,
            dim_noise: m,
            drift: Arc::new(drift),
            noise: Arc::new(noise),
            q,
            period_hint,
        })
    }

    /// Time-independent coefficients.
    pub fn autonomous(name: impl Into<String>, a: DMatrix<T>, g: DMatrix<T>, q: DMatrix<T>) -> Result<Self> {
        Self::new(name, move |_| a.clone(), move |_| g.clone(), q, None)
    }

    /// The stationary OU equation as a 1-d system: `A = -α`, `g = sqrt(2α) σ`, `Q = 1`.
    pub fn ou(params: OuParams<T>) -> Self {
        let a = DMatrix::from_element(1, 1, -params.alpha());
        let g = DMatrix::from_element(1, 1, params.diffusion());
        Self::autonomous("ou", a, g, DMatrix::identity(1, 1)).expect("valid 1-d system")
    }

    /// `A(t) = -1 + cos t`, `g(t) = sqrt(1 - cos t)`, `Q = 1`, period 2π.
    pub fn periodic_example() -> Self {
        Self::new(
            "periodic_example",
            |t: T| DMatrix::from_element(1, 1, -T::one() + t.cos()),
            |t: T| DMatrix::from_element(1, 1, (T::one() - t.cos()).max(T::zero()).sqrt()),
            DMatrix::identity(1, 1),
            Some(T::two_pi()),
        )
        .expect("valid 1-d system")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn period_hint(&self) -> Option<T> {
        self.period_hint
    }

    pub fn drift(&self, t: T) -> DMatrix<T> {
        (self.drift)(t)
    }

    pub fn noise(&self, t: T) -> DMatrix<T> {
        (self.noise)(t)
    }

    /// `g(t) Q g(t)ᵀ`.
    pub fn diffusion_cov(&self, t: T) -> DMatrix<T> {
        let g = self.noise(t);
        &g * &self.q * g.transpose()
    }

    /// Drift at `t`, rejecting non-finite entries.
    pub fn drift_checked(&self, t: T) -> Result<DMatrix<T>> {
        let a = self.drift(t);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("drift is not finite at t = {}", t.as_f64())));
        }
        Ok(a)
    }

    pub fn noise_checked(&self, t: T) -> Result<DMatrix<T>> {
        let g = self.noise(t);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "noise coefficient is not finite at t = {}",
                t.as_f64()
            )));
        }
        Ok(g)
    }
}
