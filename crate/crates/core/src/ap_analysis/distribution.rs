use nalgebra::{DMatrix, DVector};

use super::scan::{scan_candidates, AlmostPeriodReport, SampledFunction};
use super::w2::{psd_root, w2_from_roots};
use crate::error::{invalid, Result};
use crate::gp_core::{marginals, GaussianProcessSpec};
use crate::Real;

/// Most time offsets per marginal.
pub const MAX_OFFSETS: usize = 8;

/// A Gaussian law with its covariance square root precomputed.
#[derive(Debug, Clone)]
pub struct GaussianPoint<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    pub root: DMatrix<T>,
}

impl<T: Real> GaussianPoint<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let root = psd_root(&cov)?;
        Ok(Self { mean, cov, root })
    }

    pub fn w2(&self, other: &Self) -> T {
        w2_from_roots(&self.mean, &self.root, &other.mean, &other.root).unwrap_or(T::lit(f64::INFINITY))
    }
}

/// Scans `F(t) = law(X_{t + o_1}, …, X_{t + o_k})` for ε-almost periods in the
/// 2-Wasserstein metric. This checks a necessary condition for almost
/// periodicity in distribution on finite-dimensional marginals only.
pub fn distribution_ap_check<T: Real>(
    spec: &GaussianProcessSpec<T>,
    offsets: &[T],
    tau_candidates: &[T],
    epsilon: T,
    t_grid: &[T],
) -> Result<AlmostPeriodReport<T>> {
    if offsets.is_empty() || offsets.len() > MAX_OFFSETS {
        return Err(invalid(format!(
            "need 1..={MAX_OFFSETS} offsets, got {}",
            offsets.len()
        )));
    }
    if offsets.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("offsets must be strictly increasing"));
    }
    let tau_max = tau_candidates.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let window_end = t_grid.last().copied().unwrap_or(T::zero()) + tau_max;
    let offsets = offsets.to_vec();
    let f = SampledFunction::on_points(
        t_grid.to_vec(),
        window_end,
        move |t| {
            let times: Vec<T> = offsets.iter().map(|&o| t + o).collect();
            let mg = marginals(spec, &times)?;
            GaussianPoint::new(mg.mean, mg.cov)
        },
        |a: &GaussianPoint<T>, b: &GaussianPoint<T>| a.w2(b),
    )?;
    scan_candidates(&f, epsilon, tau_candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_core::{ou_spec, periodic_example_spec, OuParams};
    use std::f64::consts::TAU;

    fn grid() -> Vec<f64> {
        (0..40).map(|j| j as f64 * 0.157).collect()
    }

    #[test]
    fn periodic_marginals_repeat_after_two_pi() {
        let spec = periodic_example_spec::<f64>();
        let rep = distribution_ap_check(&spec, &[0.0, 1.0, 2.0, 3.0, 4.0], &[TAU, 3.0], 1e-10, &grid()).unwrap();
        assert_eq!(rep.taus_found, vec![TAU]);
        assert!(rep.curve[0].sup_distance <= 1e-10, "{}", rep.curve[0].sup_distance);
        assert!(rep.curve[1].sup_distance > 1e-3);
    }

    #[test]
    fn ou_marginals_are_stationary() {
        let spec = ou_spec(OuParams::new(1.0, 1.0).unwrap());
        let rep = distribution_ap_check(&spec, &[0.0, 0.5, 2.0], &[0.3, 1.7, 10.0], 1e-10, &grid()).unwrap();
        assert_eq!(rep.taus_found.len(), 3);
    }

    #[test]
    fn offsets_validated() {
        let spec = periodic_example_spec::<f64>();
        let nine: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert!(distribution_ap_check(&spec, &nine, &[TAU], 1e-10, &grid()).is_err());
        assert!(distribution_ap_check(&spec, &[1.0, 0.0], &[TAU], 1e-10, &grid()).is_err());
    }
}
