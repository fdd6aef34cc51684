use std::sync::Arc;

use nalgebra::DMatrix;

use super::{extrapolated_step, propagator, EvolutionSystem, StabilityEstimate, StabilityOptions};
use crate::error::{invalid, Error, Result};
use crate::gp_core::GaussianProcessSpec;
use crate::Real;

/// Default lag horizon of the stability certificate.
const CERTIFICATE_HORIZON: f64 = 50.0;
/// Hard cap on the truncation length, in units of `1/δ`.
const MAX_TAIL_RATES: f64 = 1e4;

/// The stochastic convolution `X_t = ∫_{-∞}^t U(t, s) g(s) dW_s` of a system
/// with an exponential stability certificate.
///
/// Covariances come from the Itô isometry:
/// `Cov(X_{t1}, X_{t2}) = Σ(t1) U(t2, t1)ᵀ` for `t1 <= t2` with
/// `Σ(t) = ∫_{-∞}^t U(t, s) g(s) Q g(s)ᵀ U(t, s)ᵀ ds`. The lower limit is
/// truncated at `t - L` where the stability bound
/// `‖U(t, s)‖ <= M e^{-δ(t - s)}` makes the neglected Frobenius tail at most
/// `M² sup tr(gQgᵀ) e^{-2δL} / (2δ) <= tail_tol`.
#[derive(Debug, Clone)]
pub struct StochasticConvolution<T: Real> {
    system: EvolutionSystem<T>,
    certificate: StabilityEstimate<T>,
    step: T,
    tail_tol: T,
}

impl<T: Real> StochasticConvolution<T> {
    /// Fits a stability certificate over a lag horizon of 50 (or eight
    /// periods, if longer) and builds the convolution. [`Error::NotStable`]
    /// unless the fitted decay rate is positive.
    pub fn new(system: EvolutionSystem<T>, step: T, tail_tol: T) -> Result<Self> {
        let mut horizon = T::lit(CERTIFICATE_HORIZON);
        if let Some(p) = system.period_hint() {
            horizon = horizon.max(p * T::lit(8.0));
        }
        let certificate = match super::check_exponential_stability_with(
            &system,
            &StabilityOptions::new(horizon, step.min(horizon * T::lit(0.01))),
        ) {
            Ok(c) => c,
            Err(Error::Unstable { norm, lag, .. }) => {
                return Err(Error::NotStable(format!(
                    "propagator norm reached {norm:e} at lag {lag}"
                )))
            }
            Err(e) => return Err(e),
        };
        Self::with_certificate(system, certificate, step, tail_tol)
    }

    pub fn with_certificate(
        system: EvolutionSystem<T>,
        certificate: StabilityEstimate<T>,
        step: T,
        tail_tol: T,
    ) -> Result<Self> {
        if !(step > T::zero()) {
            return Err(invalid("quadrature step must be positive"));
        }
        if !(tail_tol > T::zero()) {
            return Err(invalid("tail tolerance must be positive"));
        }
        if !certificate.is_exponentially_stable() {
            return Err(Error::NotStable(format!(
                "fitted decay rate delta = {} is not positive",
                certificate.delta.as_f64()
            )));
        }
        Ok(Self {
            system,
            certificate,
            step,
            tail_tol,
        })
    }

    pub fn system(&self) -> &EvolutionSystem<T> {
        &self.system
    }

    pub fn certificate(&self) -> &StabilityEstimate<T> {
        &self.certificate
    }

    fn trace_g(&self, s: T) -> T {
        self.system.diffusion_cov(s).trace()
    }

    /// Truncation length `L` below `t`.
    pub fn tail_length(&self, t: T) -> T {
        let m = self.certificate.m;
        let delta = self.certificate.delta;
        let two_delta = T::lit(2.0) * delta;
        let cap = T::lit(MAX_TAIL_RATES) / delta;
        let mut window = T::one() / delta;
        loop {
            let n = (window / self.step).ceil().to_usize().unwrap_or(1).max(1);
            let bound = (0..=n)
                .map(|k| self.trace_g(t - window * T::from_usize_lossy(k) / T::from_usize_lossy(n)))
                .fold(T::zero(), |a, b| a.max(b));
            if bound <= T::zero() {
                return T::zero();
            }
            let needed = (m * m * bound / (two_delta * self.tail_tol)).ln() / two_delta;
            if needed <= window || window >= cap {
                return needed.max(T::zero()).min(cap);
            }
            window = (window * T::lit(2.0)).max(needed);
        }
    }

    /// `Σ(t) = Cov(X_t, X_t)` by composite Simpson on `[t - L, t]`, with
    /// `U(t, s)` chained backwards through fourth-order extrapolated steps.
    pub fn sigma(&self, t: T) -> Result<DMatrix<T>> {
        let d = self.system.dim_state();
        let len = self.tail_length(t);
        let panels = (len / self.step).ceil().to_usize().unwrap_or(0);
        if panels == 0 {
            return Ok(DMatrix::zeros(d, d));
        }
        let nodes = 2 * panels;
        let eta = len / T::from_usize_lossy(nodes);
        let third = eta / T::lit(3.0);

        let mut u = DMatrix::<T>::identity(d, d);
        let mut acc = self.system.diffusion_cov(t) * third;
        for j in 1..=nodes {
            let s = t - eta * T::from_usize_lossy(j);
            u = &u * extrapolated_step(&self.system, s, eta)?;
            let integrand = &u * self.system.diffusion_cov(s) * u.transpose();
            let w = if j == nodes {
                T::one()
            } else if j % 2 == 1 {
                T::lit(4.0)
            } else {
                T::lit(2.0)
            };
            acc += integrand * (w * third);
        }
        Ok((&acc + acc.transpose()) * T::lit(0.5))
    }

    /// `Cov(X_{t1}, X_{t2}) = E[X_{t1} X_{t2}ᵀ]`.
    pub fn covariance(&self, t1: T, t2: T) -> Result<DMatrix<T>> {
        if t1 > t2 {
            return Ok(self.covariance(t2, t1)?.transpose());
        }
        let sigma = self.sigma(t1)?;
        if t1 == t2 {
            return Ok(sigma);
        }
        let u = propagator(&self.system, t1, t2, self.step)?.u;
        Ok(sigma * u.transpose())
    }

    /// `∫_{-∞}^t ‖U(t, s) g(s)‖²_{L⁰₂} ds = tr Σ(t)`.
    pub fn variance_condition(&self, t: T) -> Result<T> {
        Ok(self.sigma(t)?.trace())
    }

    /// The law of the convolution as a kernel-based process.
    pub fn process_spec(&self) -> GaussianProcessSpec<T> {
        let me = Arc::new(self.clone());
        let d = self.system.dim_state();
        GaussianProcessSpec::zero_mean(format!("convolution({})", self.system.name()), d, move |s, t| {
            me.covariance(s, t)
                .expect("drift was finite when the certificate was fitted")
        })
        .expect("state dimension is positive")
    }
}

/// `Cov(X_{t1}, X_{t2})` of the stochastic convolution. Fits a stability
/// certificate first; prefer [`StochasticConvolution`] for repeated calls.
pub fn convolution_covariance<T: Real>(
    sys: &EvolutionSystem<T>,
    t1: T,
    t2: T,
    step: T,
    tail_tol: T,
) -> Result<DMatrix<T>> {
    if t1 > t2 {
        return Err(invalid("convolution covariance needs t1 <= t2"));
    }
    StochasticConvolution::new(sys.clone(), step, tail_tol)?.covariance(t1, t2)
}

/// `∫_{-∞}^t tr(U(t,s) g(s) Q g(s)ᵀ U(t,s)ᵀ) ds`. Zero means the noise never
/// reaches the state (degenerate case).
pub fn variance_condition<T: Real>(sys: &EvolutionSystem<T>, t: T, step: T, tail_tol: T) -> Result<T> {
    StochasticConvolution::new(sys.clone(), step, tail_tol)?.variance_condition(t)
}
