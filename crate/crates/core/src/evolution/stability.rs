use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{extrapolated_step, EvolutionSystem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::Real;

/// `‖U(t, s)‖` above this multiple of `‖I‖` aborts the stability fit.
const GROWTH_LIMIT: f64 = 10.0;

/// Upper dissipativity margin: `β = -max_t λ_max((A(t) + A(t)ᵀ) / 2)` over the
/// grid. `β > 0` certifies `⟨A(t)x, x⟩ <= -β‖x‖²` on the grid; `β <= 0` is a
/// legitimate outcome.
pub fn check_dissipativity<T: Real>(sys: &EvolutionSystem<T>, t_grid: &[T]) -> Result<T> {
    if t_grid.is_empty() {
        return Err(invalid("dissipativity grid must be nonempty"));
    }
    let mut worst: Option<T> = None;
    for &t in t_grid {
        let a = sys.drift_checked(t)?;
        let top = if a.nrows() == 1 {
            a[(0, 0)]
        } else {
            linalg::extreme_eigenvalues(&linalg::sym_eigen(&a)).1
        };
        worst = Some(match worst {
            Some(w) if w >= top => w,
            _ => top,
        });
    }
    // `+ 0` turns a -0.0 result into 0.0
    Ok(-worst.expect("nonempty grid") + T::zero())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityOptions<T: Real> {
    /// Largest lag `t - s` sampled.
    pub horizon: T,
    /// Lag spacing and propagator sub-step. Rounded down to divide the
    /// period hint evenly when the system has one.
    pub step: T,
    /// Number of base points `s`.
    pub base_points: usize,
    /// Base points are spread over `[0, span)`; defaults to the period hint,
    /// else `min(horizon, 10)`.
    pub base_span: Option<T>,
}

impl<T: Real> StabilityOptions<T> {
    pub fn new(horizon: T, step: T) -> Self {
        Self {
            horizon,
            step,
            base_points: 32,
            base_span: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityGrid<T: Real> {
    pub horizon: T,
    pub lag_step: T,
    pub n_lags: usize,
    pub base_points: Vec<T>,
}

/// Fitted exponential bound `‖U(t, s)‖ <= M e^{-δ (t - s)}` plus the
/// dissipativity margin on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityEstimate<T: Real> {
    pub m: T,
    pub delta: T,
    pub beta: T,
    pub grid: StabilityGrid<T>,
    /// `max_s ‖U(s + kΔ, s)‖` for `k = 0..=n_lags`.
    #[serde(skip)]
    pub envelope: Vec<T>,
}

impl<T: Real> StabilityEstimate<T> {
    pub fn bound(&self, lag: T) -> T {
        self.m * (-self.delta * lag).exp()
    }

    pub fn is_exponentially_stable(&self) -> bool {
        self.delta > T::zero()
    }

    pub fn is_dissipative(&self) -> bool {
        self.beta > T::zero()
    }

    /// Largest violation `‖U‖ - M e^{-δ lag}` over the fitted envelope (≤ 0 when sound).
    pub fn max_violation(&self) -> T {
        self.envelope
            .iter()
            .enumerate()
            .map(|(k, &n)| n - self.bound(self.grid.lag_step * T::from_usize_lossy(k)))
            .fold(T::min_value().unwrap_or(-T::one()), |a, b| a.max(b))
    }
}

pub fn check_exponential_stability<T: Real>(
    sys: &EvolutionSystem<T>,
    horizon: T,
    step: T,
) -> Result<StabilityEstimate<T>> {
    check_exponential_stability_with(sys, &StabilityOptions::new(horizon, step))
}

/// Samples `‖U(s + kΔ, s)‖` for several base points, takes the envelope over
/// `s`, and fits the bound through the upper concave hull of
/// `(lag, ln envelope)`: `δ` is minus the slope of the hull facet over
/// `horizon / 2`, and `M` the smallest constant making the bound hold at
/// every sample.
pub fn check_exponential_stability_with<T: Real>(
    sys: &EvolutionSystem<T>,
    opts: &StabilityOptions<T>,
) -> Result<StabilityEstimate<T>> {
    if !(opts.horizon > T::zero()) {
        return Err(invalid("stability horizon must be positive"));
    }
    if !(opts.step > T::zero() && opts.step < opts.horizon) {
        return Err(invalid("stability step must be positive and below the horizon"));
    }
    if opts.base_points == 0 {
        return Err(invalid("need at least one base point"));
    }

    let (lag_step, span) = match sys.period_hint() {
        Some(p) => {
            let mut n = (p / opts.step).ceil().to_usize().unwrap_or(1).max(2);
            if n % 2 == 1 {
                n += 1;
            }
            (p / T::from_usize_lossy(n), opts.base_span.unwrap_or(p))
        }
        None => (
            opts.step,
            opts.base_span.unwrap_or_else(|| opts.horizon.min(T::lit(10.0))),
        ),
    };
    let n_lags = (opts.horizon / lag_step).ceil().to_usize().unwrap_or(1).max(2);
    let nb = opts.base_points;
    let base_points: Vec<T> = (0..nb)
        .map(|j| span * T::from_usize_lossy(j) / T::from_usize_lossy(nb))
        .collect();

    let limit = T::lit(GROWTH_LIMIT);
    let norms: Vec<Vec<T>> = base_points
        .par_iter()
        .map(|&s| {
            let d = sys.dim_state();
            let mut u = DMatrix::<T>::identity(d, d);
            let mut out = Vec::with_capacity(n_lags + 1);
            out.push(T::one());
            for k in 1..=n_lags {
                let tk = s + lag_step * T::from_usize_lossy(k - 1);
                u = extrapolated_step(sys, tk, lag_step)? * u;
                let norm = spectral_norm(&u);
                if !(norm <= limit) {
                    return Err(Error::Unstable {
                        norm: norm.as_f64(),
                        bound: GROWTH_LIMIT,
                        base: s.as_f64(),
                        lag: (lag_step * T::from_usize_lossy(k)).as_f64(),
                    });
                }
                out.push(norm);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let envelope: Vec<T> = (0..=n_lags)
        .map(|k| norms.iter().map(|v| v[k]).fold(T::zero(), |a, b| a.max(b)))
        .collect();

    let points: Vec<(T, T)> = envelope
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > T::zero())
        .map(|(k, &n)| (lag_step * T::from_usize_lossy(k), n.ln()))
        .collect();
    let hull = upper_hull(&points);
    let mid = opts.horizon * T::lit(0.5);
    let delta = match hull.windows(2).find(|w| w[1].0 >= mid).or(hull.windows(2).last()) {
        Some(w) => -(w[1].1 - w[0].1) / (w[1].0 - w[0].0),
        // Everything underflowed to zero after lag 0.
        None => T::max_value().unwrap_or(T::one()),
    };
    let ln_m = points
        .iter()
        .map(|&(lag, y)| y + delta * lag)
        .fold(T::zero(), |a, b| a.max(b));

    let mut t_grid: Vec<T> = (0..=n_lags).map(|k| lag_step * T::from_usize_lossy(k)).collect();
    t_grid.extend(base_points.iter().copied());
    let beta = check_dissipativity(sys, &t_grid)?;

    Ok(StabilityEstimate {
        m: ln_m.exp(),
        delta,
        beta,
        grid: StabilityGrid {
            horizon: opts.horizon,
            lag_step,
            n_lags,
            base_points,
        },
        envelope,
    })
}

/// Upper concave hull of points sorted by increasing x.
fn upper_hull<T: Real>(points: &[(T, T)]) -> Vec<(T, T)> {
    let mut hull: Vec<(T, T)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= T::zero() {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> EvolutionSystem<f64> {
        EvolutionSystem::autonomous(
            "scalar",
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn dissipativity_examples() {
        assert_eq!(check_dissipativity(&scalar(-0.7), &[0.0, 1.0]).unwrap(), 0.7);
        let p = EvolutionSystem::<f64>::periodic_example();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let beta = check_dissipativity(&p, &grid).unwrap();
        assert_eq!(beta, 0.0);
        // Oracle: brute maximization of -1 + cos t on the same grid.
        let oracle = -grid.iter().map(|t| -1.0 + t.cos()).fold(f64::MIN, f64::max);
        assert_eq!(beta, oracle);

        let skew = EvolutionSystem::new(
            "skew",
            |t: f64| DMatrix::from_row_slice(2, 2, &[-2.0, t.sin(), -t.sin(), -2.0]),
            |_| DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            None,
        )
        .unwrap();
        let grid: Vec<f64> = (0..100).map(|i| i as f64 * 0.37).collect();
        assert!((check_dissipativity(&skew, &grid).unwrap() - 2.0).abs() < 1e-12);
        assert!(check_dissipativity(&skew, &[]).is_err());
    }

    #[test]
    fn constant_decay_fit() {
        let est = check_exponential_stability(&scalar(-1.0), 20.0, 0.01).unwrap();
        assert!((est.delta - 1.0).abs() < 1e-3, "delta {}", est.delta);
        assert!((est.m - 1.0).abs() < 1e-3, "m {}", est.m);
        assert!(est.max_violation() <= 1e-12);
        assert_eq!(est.beta, 1.0);
    }

    #[test]
    fn periodic_example_fit() {
        let sys = EvolutionSystem::<f64>::periodic_example();
        let est = check_exponential_stability(&sys, 50.0, 0.01).unwrap();
        assert!((est.delta - 1.0).abs() < 1e-3, "delta {}", est.delta);
        assert!(est.m <= 2f64.exp() * (1.0 + 1e-6), "m {}", est.m);
        assert!(est.m >= 1.99f64.exp(), "m {}", est.m);
        assert!(est.max_violation() <= 1e-12);
        assert_eq!(est.beta, 0.0);
        // Closed-form oracle for the grid: max over lags of e^{sin(s+Δ) - sin s}·e^{(δ-1)Δ}.
        let closed: f64 = est
            .grid
            .base_points
            .iter()
            .flat_map(|&s| {
                (0..=est.grid.n_lags).map(move |k| {
                    let lag = k as f64 * est.grid.lag_step;
                    ((s + lag).sin() - s.sin() + (est.delta - 1.0) * lag).exp()
                })
            })
            .fold(0.0, f64::max);
        assert!((closed - est.m).abs() < 1e-6 * est.m);
    }

    #[test]
    fn growth_is_unstable() {
        let err = check_exponential_stability(&scalar(1.0), 20.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn neutral_system_has_zero_rate() {
        let est = check_exponential_stability(&scalar(0.0), 10.0, 0.1).unwrap();
        assert!(est.delta.abs() < 1e-12);
        assert!(!est.is_exponentially_stable());
    }

    #[test]
    fn hull_keeps_extreme_points() {
        let pts = vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.5), (3.0, 2.0), (4.0, 0.0)];
        let h = upper_hull(&pts);
        assert_eq!(h, vec![(0.0, 0.0), (1.0, 1.0), (3.0, 2.0), (4.0, 0.0)]);
    }
}
