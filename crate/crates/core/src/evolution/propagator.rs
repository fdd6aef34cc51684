use nalgebra::DMatrix;
use serde::Serialize;

use super::EvolutionSystem;
use crate::error::{invalid, Error, Result};
use crate::linalg::{expm, frobenius};
use crate::Real;

/// Relative error budget for a propagator evaluation.
const PROPAGATOR_REL_TOL: f64 = 1e-6;

/// Numeric `U(t, s)` with accuracy metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorEval<T: Real> {
    pub s: T,
    pub t: T,
    #[serde(skip)]
    pub u: DMatrix<T>,
    /// Sub-step actually used.
    pub step: T,
    /// Step-halving error estimate (Frobenius) of the half-step solution;
    /// the returned `u` is its Richardson extrapolation and is more accurate.
    pub err_est: T,
}

/// One midpoint-exponential step `exp(h A(t + h/2))`.
fn magnus_step<T: Real>(sys: &EvolutionSystem<T>, t: T, h: T) -> Result<DMatrix<T>> {
    let a = sys.drift_checked(t + h * T::lit(0.5))?;
    Ok(expm(&(a * h)))
}

/// Coarse (one step of `h`) and fine (two steps of `h/2`) maps from `t` to `t + h`.
fn step_pair<T: Real>(sys: &EvolutionSystem<T>, t: T, h: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let half = h * T::lit(0.5);
    let coarse = magnus_step(sys, t, h)?;
    let fine = magnus_step(sys, t + half, half)? * magnus_step(sys, t, half)?;
    Ok((coarse, fine))
}

/// Richardson-extrapolated map `U(t + h, t) ≈ (4·fine - coarse) / 3`.
///
/// The midpoint exponential is a symmetric scheme, so its error expansion
/// has only even powers of `h` and the extrapolation is fourth order.
pub(crate) fn extrapolated_step<T: Real>(sys: &EvolutionSystem<T>, t: T, h: T) -> Result<DMatrix<T>> {
    let (coarse, fine) = step_pair(sys, t, h)?;
    Ok((fine * T::lit(4.0) - coarse) / T::lit(3.0))
}

fn chain<T: Real>(sys: &EvolutionSystem<T>, s: T, t: T, n: usize) -> Result<(DMatrix<T>, DMatrix<T>, T)> {
    let d = sys.dim_state();
    let h = (t - s) / T::from_usize_lossy(n);
    let mut coarse = DMatrix::identity(d, d);
    let mut fine = DMatrix::identity(d, d);
    for k in 0..n {
        let tk = s + h * T::from_usize_lossy(k);
        let (c, f) = step_pair(sys, tk, h)?;
        coarse = c * coarse;
        fine = f * fine;
    }
    Ok((coarse, fine, h))
}

/// `U(t, s)` by sub-stepped order-2 Magnus (midpoint exponential) with
/// step halving. The step is refined once if the error estimate exceeds
/// `1e-6 ‖U‖`; [`Error::StepTooLarge`] if it still does.
pub fn propagator<T: Real>(sys: &EvolutionSystem<T>, s: T, t: T, step: T) -> Result<PropagatorEval<T>> {
    if !(step > T::zero()) {
        return Err(invalid("propagator step must be positive"));
    }
    if !(s <= t) {
        return Err(invalid(format!(
            "propagator needs s <= t, got s = {}, t = {}",
            s.as_f64(),
            t.as_f64()
        )));
    }
    let d = sys.dim_state();
    if s == t {
        return Ok(PropagatorEval {
            s,
            t,
            u: DMatrix::identity(d, d),
            step,
            err_est: T::zero(),
        });
    }

    let base_n = ((t - s) / step).ceil().to_usize().unwrap_or(usize::MAX).max(1);
    let mut last = (T::zero(), T::zero());
    for n in [base_n, 2 * base_n] {
        let (coarse, fine, h) = chain(sys, s, t, n)?;
        let err_est = frobenius(&(&fine - &coarse)) / T::lit(3.0);
        let u = (fine * T::lit(4.0) - coarse) / T::lit(3.0);
        let tol = T::lit(PROPAGATOR_REL_TOL) * frobenius(&u);
        if err_est <= tol {
            return Ok(PropagatorEval {
                s,
                t,
                u,
                step: h,
                err_est,
            });
        }
        last = (err_est, tol);
    }
    Err(Error::StepTooLarge {
        err_est: last.0.as_f64(),
        tol: last.1.as_f64(),
    })
}
