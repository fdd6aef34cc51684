//! Almost-period scans, relative density, Gaussian Wasserstein distances and
//! the two falsification routes for mean-square almost periodicity.

mod distribution;
mod falsify;
mod lemma;
mod scan;
mod w2;

pub use distribution::{distribution_ap_check, GaussianPoint, MAX_OFFSETS};
pub use falsify::{ms_ap_falsify, FalsifyGrid, MsFalsification};
pub use lemma::{lemma_check, LemmaOptions, LemmaReport, LemmaVerdict, ProbeSequence};
pub use scan::{
    scan_almost_periods, scan_candidates, AlmostPeriodReport, ComparisonGrid, CurvePoint, SampledFunction, Witness,
};
pub use w2::{gaussian_w2, w2_from_roots};

use crate::Real;

/// Largest gap of `taus ∩ [a, b]`, counting the gaps to both ends.
pub fn max_gap<T: Real>(taus: &[T], range: (T, T)) -> T {
    let (a, b) = range;
    let mut prev = a;
    let mut gap = T::zero();
    for &t in taus.iter().filter(|&&t| t >= a && t <= b) {
        gap = gap.max(t - prev);
        prev = t;
    }
    gap.max(b - prev)
}

/// True iff every closed subinterval of `[a, b]` of length `l` contains a
/// point of `taus`, i.e. the largest gap (ends included) is at most `l`.
pub fn relatively_dense<T: Real>(taus: &[T], range: (T, T), l: T) -> bool {
    max_gap(taus, range) <= l
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn multiples_of_two_pi() {
        let taus: Vec<f64> = (0..=15).map(|k| k as f64 * TAU).collect();
        assert!(relatively_dense(&taus, (0.0, 100.0), 7.0));
        assert!(!relatively_dense(&taus, (0.0, 100.0), 6.0));
    }

    #[test]
    fn single_point_is_sparse() {
        assert!(!relatively_dense(&[1.0], (0.0, 100.0), 10.0));
        assert_eq!(max_gap(&[1.0], (0.0, 100.0)), 99.0);
    }

    #[test]
    fn empty_set_only_dense_in_short_ranges() {
        assert!(!relatively_dense::<f64>(&[], (0.0, 10.0), 5.0));
        assert!(relatively_dense::<f64>(&[], (0.0, 4.0), 5.0));
    }
}
