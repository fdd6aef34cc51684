//! Order-independent reductions used by the Monte Carlo estimators.

use crate::Real;

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().fold(T::zero(), |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    pairwise_sum(xs) / T::from_usize_lossy(xs.len())
}

/// Sample mean and its standard error `sd / sqrt(n)` (unbiased variance).
pub fn mean_and_se<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, T::zero());
    }
    let sq: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&sq) / T::from_usize_lossy(n - 1);
    (m, (var / T::from_usize_lossy(n)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
    }

    #[test]
    fn mean_and_se_small_sample() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // unbiased variance 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn f32_pairwise_is_accurate() {
        let xs = vec![0.1f32; 1_000_000];
        assert!((pairwise_sum(&xs) - 100_000.0).abs() < 1.0);
    }
}
