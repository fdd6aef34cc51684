//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::Real;

/// Relative tolerance for PSD checks: smallest eigenvalue must be at least
/// `-PSD_REL_TOL * |largest|`.
pub const PSD_REL_TOL: f64 = 1e-10;

const PADE_ORDER: usize = 6;

/// Matrix exponential by scaling and squaring with a fixed `[6/6]` Padé
/// approximant. The scaled matrix has 1-norm at most 1/2, where the Padé
/// truncation error is below `1e-16`.
pub fn expm<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].exp());
    }

    let norm = one_norm(a);
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > half {
        scale *= half;
        squarings += 1;
    }
    let x = a * scale;

    let mut coeffs = [T::one(); PADE_ORDER + 1];
    for k in 1..=PADE_ORDER {
        let q = PADE_ORDER as f64;
        let kf = k as f64;
        coeffs[k] = coeffs[k - 1] * T::lit((q - kf + 1.0) / (kf * (2.0 * q - kf + 1.0)));
    }

    let eye = DMatrix::<T>::identity(n, n);
    let mut num = eye.clone() * coeffs[0];
    let mut den = eye.clone() * coeffs[0];
    let mut power = eye;
    for (k, &c) in coeffs.iter().enumerate().skip(1) {
        power = &power * &x;
        num += &power * c;
        if k % 2 == 0 {
            den += &power * c;
        } else {
            den -= &power * c;
        }
    }

    let mut out = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for 1-norm <= 1/2");
    for _ in 0..squarings {
        out = &out * &out;
    }
    out
}

pub fn one_norm<T: Real>(a: &DMatrix<T>) -> T {
    a.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |m, v| if v > m { v } else { m })
}

pub fn frobenius<T: Real>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    if a.nrows() == 1 && a.ncols() == 1 {
        return a[(0, 0)].abs();
    }
    a.singular_values()
        .iter()
        .fold(T::zero(), |m, &v| if v > m { v } else { m })
}

pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

pub fn max_asymmetry<T: Real>(a: &DMatrix<T>) -> T {
    let d = a - a.transpose();
    d.iter().fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
}

/// Eigen-decomposition of the symmetric part of `a`.
pub fn sym_eigen<T: Real>(a: &DMatrix<T>) -> SymmetricEigen<T, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(a))
}

pub fn extreme_eigenvalues<T: Real>(eig: &SymmetricEigen<T, nalgebra::Dyn>) -> (T, T) {
    let mut lo = eig.eigenvalues[0];
    let mut hi = eig.eigenvalues[0];
    for &v in eig.eigenvalues.iter() {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

fn psd_floor<T: Real>(hi: T, rel_tol: T) -> T {
    -rel_tol * hi.abs()
}

/// Fails with [`Error::NonPsd`] when the symmetric part of `a` has an
/// eigenvalue below `-rel_tol * |largest|`.
pub fn check_psd<T: Real>(a: &DMatrix<T>, rel_tol: T) -> Result<SymmetricEigen<T, nalgebra::Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPsd {
            min_eig: f64::NAN,
            max_eig: f64::NAN,
        });
    }
    let eig = sym_eigen(a);
    let (lo, hi) = extreme_eigenvalues(&eig);
    if lo < psd_floor(hi, rel_tol) {
        return Err(Error::NonPsd {
            min_eig: lo.as_f64(),
            max_eig: hi.as_f64(),
        });
    }
    Ok(eig)
}

/// Symmetric square root `V diag(sqrt(max(λ, 0))) Vᵀ` of a PSD matrix.
pub fn psd_sqrt<T: Real>(a: &DMatrix<T>, rel_tol: T) -> Result<DMatrix<T>> {
    let eig = check_psd(a, rel_tol)?;
    Ok(sqrt_from_eigen(&eig))
}

pub fn sqrt_from_eigen<T: Real>(eig: &SymmetricEigen<T, nalgebra::Dyn>) -> DMatrix<T> {
    let roots = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&roots) * v.transpose()
}
