//! Closed-form laws of the Gaussian processes and their finite-dimensional
//! marginals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{self, PSD_REL_TOL};
use crate::Real;

/// Parameters of the stationary Ornstein–Uhlenbeck process
/// `dX = -α X dt + sqrt(2α) σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OuParams<T> {
    alpha: T,
    sigma: T,
}

impl<T: Real> OuParams<T> {
    pub fn new(alpha: T, sigma: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha.is_finite()) {
            return Err(invalid(format!("OU alpha must be positive, got {}", alpha.as_f64())));
        }
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(invalid(format!("OU sigma must be positive, got {}", sigma.as_f64())));
        }
        Ok(Self { alpha, sigma })
    }

    /// Mean-reversion rate.
    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Stationary standard deviation.
    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn variance(&self) -> T {
        self.sigma * self.sigma
    }

    /// `sqrt(2α) σ`.
    pub fn diffusion(&self) -> T {
        (T::lit(2.0) * self.alpha).sqrt() * self.sigma
    }

    pub fn covariance_at_lag(&self, lag: T) -> T {
        self.variance() * (-self.alpha * lag.abs()).exp()
    }
}

pub type MeanFn<T> = Arc<dyn Fn(T) -> DVector<T> + Send + Sync>;
pub type KernelFn<T> = Arc<dyn Fn(T, T) -> DMatrix<T> + Send + Sync>;

/// A (vector) Gaussian process given by its mean function and covariance
/// kernel `K(s, t) = Cov(X_s, X_t)`.
#[derive(Clone)]
pub struct GaussianProcessSpec<T: Real> {
    name: String,
    dim: usize,
    mean: MeanFn<T>,
    kernel: KernelFn<T>,
}

impl<T: Real> fmt::Debug for GaussianProcessSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianProcessSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl<T: Real> GaussianProcessSpec<T> {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        mean: impl Fn(T) -> DVector<T> + Send + Sync + 'static,
        kernel: impl Fn(T, T) -> DMatrix<T> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("process dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            mean: Arc::new(mean),
            kernel: Arc::new(kernel),
        })
    }

    pub fn zero_mean(
        name: impl Into<String>,
        dim: usize,
        kernel: impl Fn(T, T) -> DMatrix<T> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(name, dim, move |_| DVector::zeros(dim), kernel)
    }

    /// Scalar zero-mean process from a scalar kernel.
    pub fn scalar(name: impl Into<String>, kernel: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        Self::zero_mean(name, 1, move |s, t| DMatrix::from_element(1, 1, kernel(s, t))).expect("dimension 1 is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, t: T) -> DVector<T> {
        (self.mean)(t)
    }

    pub fn kernel(&self, s: T, t: T) -> DMatrix<T> {
        (self.kernel)(s, t)
    }

    /// `K(t, t)`.
    pub fn variance(&self, t: T) -> DMatrix<T> {
        self.kernel(t, t)
    }
}

/// Law of the stationary OU process: zero mean, `K(s, t) = σ² exp(-α|t - s|)`.
pub fn ou_spec<T: Real>(params: OuParams<T>) -> GaussianProcessSpec<T> {
    GaussianProcessSpec::scalar(
        format!("ou(alpha={}, sigma={})", params.alpha.as_f64(), params.sigma.as_f64()),
        move |s, t| params.covariance_at_lag(t - s),
    )
}

/// `U(t, s) = exp(-(t - s) + sin t - sin s)` for the drift `A(t) = -1 + cos t`.
pub fn periodic_example_propagator<T: Real>(s: T, t: T) -> T {
    (-(t - s) + t.sin() - s.sin()).exp()
}

/// Law of the L²-bounded solution of `dX = (-1 + cos t) X dt + sqrt(1 - cos t) dW`:
/// zero mean, `K(t, t + τ) = ½ exp(-τ + sin(t + τ) - sin t)` for `τ >= 0`,
/// extended symmetrically. The variance is the constant `½`.
pub fn periodic_example_spec<T: Real>() -> GaussianProcessSpec<T> {
    GaussianProcessSpec::scalar("periodic_example", |s, t| {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        T::lit(0.5) * periodic_example_propagator(lo, hi)
    })
}

/// Joint law of `(X_{t_1}, …, X_{t_k})`, stacked time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGaussian<T: Real> {
    pub times: Vec<T>,
    pub dim: usize,
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> MarginalGaussian<T> {
    /// Validates shape and the PSD invariant (after symmetrization).
    pub fn new(times: Vec<T>, dim: usize, mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let n = times.len() * dim;
        if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(invalid(format!(
                "marginal of {} times x dim {dim} needs mean {n} and cov {n}x{n}",
                times.len()
            )));
        }
        let cov = linalg::symmetrize(&cov);
        linalg::check_psd(&cov, T::lit(PSD_REL_TOL))?;
        Ok(Self { times, dim, mean, cov })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Assembles the marginal law at strictly increasing `times`.
pub fn marginals<T: Real>(spec: &GaussianProcessSpec<T>, times: &[T]) -> Result<MarginalGaussian<T>> {
    if times.is_empty() {
        return Err(invalid("marginal times must be nonempty"));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("marginal times must be strictly increasing"));
    }
    let d = spec.dim();
    let k = times.len();
    let mut mean = DVector::zeros(k * d);
    let mut cov = DMatrix::zeros(k * d, k * d);
    for (i, &ti) in times.iter().enumerate() {
        mean.rows_mut(i * d, d).copy_from(&spec.mean(ti));
        for (j, &tj) in times.iter().enumerate().skip(i) {
            let block = spec.kernel(ti, tj);
            if block.nrows() != d || block.ncols() != d {
                return Err(invalid(format!(
                    "kernel returned {}x{} block, expected {d}x{d}",
                    block.nrows(),
                    block.ncols()
                )));
            }
            cov.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            if j != i {
                cov.view_mut((j * d, i * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    MarginalGaussian::new(times.to_vec(), d, mean, cov)
}

/// `E‖X_{t+τ} - X_t‖²` for a zero-mean process: `tr K(t,t) + tr K(t+τ,t+τ) - 2 tr K(t,t+τ)`,
/// plus the squared mean increment. Clamped at zero.
pub fn l2_increment<T: Real>(spec: &GaussianProcessSpec<T>, t: T, tau: T) -> Result<T> {
    if !(tau >= T::zero()) {
        return Err(invalid(format!("tau must be nonnegative, got {}", tau.as_f64())));
    }
    if tau == T::zero() {
        return Ok(T::zero());
    }
    let s = t + tau;
    let v = spec.kernel(t, t).trace() + spec.kernel(s, s).trace() - T::lit(2.0) * spec.kernel(t, s).trace();
    let dm = spec.mean(s) - spec.mean(t);
    Ok((v + dm.norm_squared()).max(T::zero()))
}
