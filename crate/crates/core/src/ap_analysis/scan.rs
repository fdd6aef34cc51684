use rayon::prelude::*;
use serde::Serialize;

use super::{max_gap, relatively_dense};
use crate::error::{invalid, Error, Result};
use crate::table::CsvTable;
use crate::Real;

type EvalFn<'a, T, P> = Box<dyn Fn(T) -> Result<P> + Send + Sync + 'a>;
type DistFn<'a, T, P> = Box<dyn Fn(&P, &P) -> T + Send + Sync + 'a>;

const GOLDEN_ITERS: usize = 200;

/// A function `t ↦ f(t)` into a metric space, compared on a fixed set of
/// points of its window `[points[0], window_end]`.
pub struct SampledFunction<'a, T: Real, P> {
    points: Vec<T>,
    window_end: T,
    grid_step: Option<T>,
    eval: EvalFn<'a, T, P>,
    distance: DistFn<'a, T, P>,
}

impl<'a, T: Real, P: Send + Sync> SampledFunction<'a, T, P> {
    /// Uniform grid `0, h, 2h, …` over `[0, window_end]`.
    pub fn uniform(
        window_end: T,
        grid_step: T,
        eval: impl Fn(T) -> Result<P> + Send + Sync + 'a,
        distance: impl Fn(&P, &P) -> T + Send + Sync + 'a,
    ) -> Result<Self> {
        if !(grid_step > T::zero()) || !(window_end > T::zero()) {
            return Err(invalid("window and grid step must be positive"));
        }
        let n = (window_end / grid_step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
        let points = (0..=n).map(|k| grid_step * T::from_usize_lossy(k)).collect();
        Ok(Self {
            points,
            window_end,
            grid_step: Some(grid_step),
            eval: Box::new(eval),
            distance: Box::new(distance),
        })
    }

    /// Explicit comparison points; `f` must be defined up to `window_end`.
    pub fn on_points(
        points: Vec<T>,
        window_end: T,
        eval: impl Fn(T) -> Result<P> + Send + Sync + 'a,
        distance: impl Fn(&P, &P) -> T + Send + Sync + 'a,
    ) -> Result<Self> {
        if points.is_empty() || points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("comparison points must be nonempty and strictly increasing"));
        }
        Ok(Self {
            points,
            window_end,
            grid_step: None,
            eval: Box::new(eval),
            distance: Box::new(distance),
        })
    }

    pub fn eval(&self, t: T) -> Result<P> {
        (self.eval)(t)
    }

    pub fn distance(&self, a: &P, b: &P) -> T {
        (self.distance)(a, b)
    }

    pub fn window(&self) -> (T, T) {
        (self.points[0], self.window_end)
    }

    pub fn grid_step(&self) -> Option<T> {
        self.grid_step
    }
}

/// Where a τ was compared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonGrid<T: Real> {
    pub t_min: T,
    pub t_max: T,
    pub n_points: usize,
    pub grid_step: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint<T: Real> {
    pub tau: T,
    pub sup_distance: T,
    pub worst_t: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness<T: Real> {
    pub t: T,
    pub tau: T,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlmostPeriodReport<T: Real> {
    pub epsilon: T,
    pub taus_found: Vec<T>,
    pub window: (T, T),
    pub search_range: (T, T),
    pub tau_step: Option<T>,
    pub comparison: ComparisonGrid<T>,
    /// Largest gap of `taus_found` over the search range, ends included.
    pub inclusion_length: T,
    /// Whether the found set meets every interval of length `inclusion_length`
    /// and that length is at most half the search range.
    pub relatively_dense: bool,
    /// Worst comparison point for each found τ.
    pub witnesses: Vec<Witness<T>>,
    pub curve: Vec<CurvePoint<T>>,
}

impl<T: Real> AlmostPeriodReport<T> {
    /// The sup-distance curve as `tau, sup_distance, worst_t`.
    pub fn curve_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["tau", "sup_distance", "worst_t"])
            .comment(format!("epsilon={:?}", self.epsilon.as_f64()))
            .comment(format!(
                "comparison=[{:?}, {:?}] points={}",
                self.comparison.t_min.as_f64(),
                self.comparison.t_max.as_f64(),
                self.comparison.n_points
            ));
        for c in &self.curve {
            t.push(vec![c.tau.as_f64(), c.sup_distance.as_f64(), c.worst_t.as_f64()]);
        }
        t
    }

    /// Smallest found τ at least `min_tau`.
    pub fn first_at_least(&self, min_tau: T) -> Option<&Witness<T>> {
        self.witnesses.iter().find(|w| w.tau >= min_tau)
    }
}

struct Prepared<'f, 'a, T: Real, P> {
    f: &'f SampledFunction<'a, T, P>,
    points: Vec<T>,
    base: Vec<P>,
}

impl<T: Real, P: Send + Sync> Prepared<'_, '_, T, P> {
    fn sup_distance(&self, tau: T) -> Result<(T, T)> {
        let mut worst = (T::zero(), self.points[0]);
        for (p, b) in self.points.iter().zip(&self.base) {
            let d = self.f.distance(b, &self.f.eval(*p + tau)?);
            let d = if d.is_finite() { d } else { T::lit(f64::INFINITY) };
            if d > worst.0 {
                worst = (d, *p);
            }
        }
        Ok(worst)
    }

    fn curve(&self, taus: &[T]) -> Result<Vec<CurvePoint<T>>> {
        let rows: Vec<Result<CurvePoint<T>>> = taus
            .par_iter()
            .map(|&tau| {
                let (d, t) = self.sup_distance(tau)?;
                Ok(CurvePoint {
                    tau,
                    sup_distance: d,
                    worst_t: t,
                })
            })
            .collect();
        rows.into_iter().collect()
    }

    /// Golden-section minimization of the sup-distance on `[lo, hi]`.
    fn refine(&self, mut lo: T, mut hi: T) -> Result<CurvePoint<T>> {
        let g = T::lit(0.5 * (5f64.sqrt() - 1.0));
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let mut f1 = self.sup_distance(x1)?;
        let mut f2 = self.sup_distance(x2)?;
        for _ in 0..GOLDEN_ITERS {
            if hi - lo <= T::eps() * T::lit(4.0) * hi.abs().max(T::one()) {
                break;
            }
            if f1.0 <= f2.0 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = self.sup_distance(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = self.sup_distance(x2)?;
            }
        }
        let (tau, (d, t)) = if f1.0 <= f2.0 { (x1, f1) } else { (x2, f2) };
        Ok(CurvePoint {
            tau,
            sup_distance: d,
            worst_t: t,
        })
    }
}

fn prepare<'f, 'a, T: Real, P: Send + Sync>(
    f: &'f SampledFunction<'a, T, P>,
    tau_max: T,
) -> Result<Prepared<'f, 'a, T, P>> {
    let slack = T::lit(1e-12) * f.window_end.abs().max(T::one());
    let points: Vec<T> = f
        .points
        .iter()
        .copied()
        .filter(|&p| p + tau_max <= f.window_end + slack)
        .collect();
    if points.is_empty() {
        return Err(Error::WindowTooShort {
            needed: (f.points[0] + tau_max).as_f64(),
            available: f.window_end.as_f64(),
        });
    }
    let base: Vec<Result<P>> = points.par_iter().map(|&p| f.eval(p)).collect();
    let base = base.into_iter().collect::<Result<Vec<P>>>()?;
    Ok(Prepared { f, points, base })
}

#[allow(clippy::too_many_arguments)]
fn assemble<T: Real>(
    epsilon: T,
    range: (T, T),
    tau_step: Option<T>,
    prepared_points: &[T],
    window: (T, T),
    grid_step: Option<T>,
    curve: Vec<CurvePoint<T>>,
    extra: Vec<CurvePoint<T>>,
) -> AlmostPeriodReport<T> {
    let mut hits: Vec<CurvePoint<T>> = curve
        .iter()
        .chain(extra.iter())
        .filter(|c| c.sup_distance <= epsilon)
        .copied()
        .collect();
    hits.sort_by(|a, b| a.tau.partial_cmp(&b.tau).expect("finite tau"));
    hits.dedup_by(|a, b| a.tau == b.tau);
    let taus_found: Vec<T> = hits.iter().map(|c| c.tau).collect();
    let inclusion_length = max_gap(&taus_found, range);
    let half = (range.1 - range.0) * T::lit(0.5);
    AlmostPeriodReport {
        epsilon,
        window,
        search_range: range,
        tau_step,
        comparison: ComparisonGrid {
            t_min: prepared_points[0],
            t_max: *prepared_points.last().expect("nonempty"),
            n_points: prepared_points.len(),
            grid_step,
        },
        relatively_dense: !taus_found.is_empty() && relatively_dense(&taus_found, range, half),
        inclusion_length,
        witnesses: hits
            .iter()
            .map(|c| Witness {
                t: c.worst_t,
                tau: c.tau,
                distance: c.sup_distance,
            })
            .collect(),
        taus_found,
        curve,
    }
}

/// Scans `τ = τ_min, τ_min + step, …, τ_max` and reports every τ with
/// `sup_t d(f(t + τ), f(t)) <= ε`, the sup taken over the comparison points
/// `t` with `t + τ_max` inside the window. Local minima of the curve that may
/// dip below ε between grid nodes are refined by golden section.
pub fn scan_almost_periods<T: Real, P: Send + Sync>(
    f: &SampledFunction<'_, T, P>,
    epsilon: T,
    tau_range: (T, T),
    tau_step: T,
) -> Result<AlmostPeriodReport<T>> {
    let (lo, hi) = tau_range;
    if !(tau_step > T::zero()) || !(lo <= hi) || !(lo >= T::zero()) || !(epsilon >= T::zero()) {
        return Err(invalid("need 0 <= tau_min <= tau_max, tau_step > 0 and epsilon >= 0"));
    }
    let prepared = prepare(f, hi)?;
    let n = ((hi - lo) / tau_step - T::lit(1e-9)).ceil().to_usize().unwrap_or(0);
    let taus: Vec<T> = (0..=n)
        .map(|j| (lo + tau_step * T::from_usize_lossy(j)).min(hi))
        .collect();
    let curve = prepared.curve(&taus)?;

    let candidates: Vec<usize> = (1..curve.len().saturating_sub(1))
        .filter(|&j| {
            let (a, b, c) = (
                curve[j - 1].sup_distance,
                curve[j].sup_distance,
                curve[j + 1].sup_distance,
            );
            if !(b <= a && b <= c) || b <= epsilon {
                return false;
            }
            let slope = (a - b).max(c - b);
            b - slope <= epsilon
        })
        .collect();
    let refined: Vec<Result<CurvePoint<T>>> = candidates
        .par_iter()
        .map(|&j| prepared.refine(curve[j - 1].tau, curve[j + 1].tau))
        .collect();
    let refined = refined.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(assemble(
        epsilon,
        tau_range,
        Some(tau_step),
        &prepared.points,
        f.window(),
        f.grid_step(),
        curve,
        refined,
    ))
}

/// As [`scan_almost_periods`] over an explicit candidate list, without refinement.
pub fn scan_candidates<T: Real, P: Send + Sync>(
    f: &SampledFunction<'_, T, P>,
    epsilon: T,
    taus: &[T],
) -> Result<AlmostPeriodReport<T>> {
    if taus.is_empty() || taus.iter().any(|t| !(*t >= T::zero())) {
        return Err(invalid("tau candidates must be nonempty and nonnegative"));
    }
    let lo = taus.iter().copied().fold(taus[0], |a, b| a.min(b));
    let hi = taus.iter().copied().fold(taus[0], |a, b| a.max(b));
    let prepared = prepare(f, hi)?;
    let curve = prepared.curve(taus)?;
    Ok(assemble(
        epsilon,
        (lo, hi),
        None,
        &prepared.points,
        f.window(),
        f.grid_step(),
        curve,
        Vec::new(),
    ))
}
