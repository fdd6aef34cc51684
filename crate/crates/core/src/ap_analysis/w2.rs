use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{check_psd, sqrt_from_eigen};
use crate::Real;

/// Eigenvalues below `-PSD_CLAMP_TOL · max(1, |λ_max|)` are rejected; the rest
/// are clamped at zero before taking square roots.
const PSD_CLAMP_TOL: f64 = 1e-12;

pub(super) fn psd_root<T: Real>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    let scale = c.iter().fold(T::one(), |a, v| a.max(v.abs()));
    Ok(sqrt_from_eigen(&check_psd(&(c / scale), T::lit(PSD_CLAMP_TOL))?) * scale.sqrt())
}

/// 2-Wasserstein distance between `N(m1, C1)` and `N(m2, C2)`:
/// `sqrt(‖m1 - m2‖² + tr(C1 + C2 - 2 (C2^{1/2} C1 C2^{1/2})^{1/2}))`.
pub fn gaussian_w2<T: Real>(m1: &DVector<T>, c1: &DMatrix<T>, m2: &DVector<T>, c2: &DMatrix<T>) -> Result<T> {
    let n = m1.len();
    if m2.len() != n || c1.shape() != (n, n) || c2.shape() != (n, n) {
        return Err(invalid("gaussian_w2: dimension mismatch"));
    }
    w2_from_roots(m1, &psd_root(c1)?, m2, &psd_root(c2)?)
}

/// Same distance given symmetric square roots `A = C1^{1/2}`, `B = C2^{1/2}`.
///
/// Evaluated as `‖A - B R‖_F` with `R` the orthogonal polar factor aligning
/// `B` to `A` (from the SVD of `A B`), which stays accurate when `C1 ≈ C2`.
pub fn w2_from_roots<T: Real>(m1: &DVector<T>, a: &DMatrix<T>, m2: &DVector<T>, b: &DMatrix<T>) -> Result<T> {
    let mean_sq = (m1 - m2).norm_squared();
    if a.nrows() == 1 {
        let d = a[(0, 0)].abs() - b[(0, 0)].abs();
        return Ok((mean_sq + d * d).sqrt());
    }
    let svd = (a * b).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(invalid("gaussian_w2: SVD did not converge")),
    };
    let r = v_t.transpose() * u.transpose();
    let diff = a - b * r;
    Ok((mean_sq + diff.norm_squared()).sqrt())
}
