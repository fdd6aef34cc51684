use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gp_core::{l2_increment, GaussianProcessSpec};
use crate::Real;

/// Rectangular `(t, τ)` grid for the L²-increment infimum. Both axes include
/// their endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FalsifyGrid<T: Real> {
    pub tau_min: T,
    pub tau_max: T,
    pub tau_step: T,
    pub t_start: T,
    pub t_end: T,
    pub t_step: T,
    /// `c` at or below this is inconclusive.
    pub tol: T,
}

impl<T: Real> FalsifyGrid<T> {
    pub fn new(tau: (T, T), tau_step: T, t: (T, T), t_step: T) -> Self {
        Self {
            tau_min: tau.0,
            tau_max: tau.1,
            tau_step,
            t_start: t.0,
            t_end: t.1,
            t_step,
            tol: T::lit(1e-12),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.tau_min >= T::zero()
            && self.tau_min <= self.tau_max
            && self.tau_step > T::zero()
            && self.t_start <= self.t_end
            && self.t_step > T::zero()
            && self.tol >= T::zero();
        if !ok {
            return Err(invalid(
                "falsify grid needs 0 <= tau_min <= tau_max, t_start <= t_end, positive steps",
            ));
        }
        Ok(())
    }
}

fn axis<T: Real>(lo: T, hi: T, step: T) -> Vec<T> {
    let n = ((hi - lo) / step - T::lit(1e-9)).ceil().to_usize().unwrap_or(0);
    (0..=n).map(|j| (lo + step * T::from_usize_lossy(j)).min(hi)).collect()
}

/// A positive lower bound on `E‖X_{t+τ} - X_t‖²` over the tested range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsFalsification<T: Real> {
    pub c: T,
    pub argmin_t: T,
    pub argmin_tau: T,
    /// No τ in the range is an ε-almost period in L² for `ε < sqrt(c)`.
    pub epsilon_bound: T,
    pub grid: FalsifyGrid<T>,
    pub n_evaluations: usize,
    pub verdict: String,
}

/// `c = min l2_increment(spec, t, τ)` over the grid. If `c > tol` no τ in
/// `[tau_min, tau_max]` is an ε-almost period in mean square for `ε < sqrt(c)`,
/// so the process is not mean-square almost periodic on the tested range.
pub fn ms_ap_falsify<T: Real>(spec: &GaussianProcessSpec<T>, grid: &FalsifyGrid<T>) -> Result<MsFalsification<T>> {
    grid.validate()?;
    let taus = axis(grid.tau_min, grid.tau_max, grid.tau_step);
    let ts = axis(grid.t_start, grid.t_end, grid.t_step);
    let rows: Vec<Result<(T, T, T)>> = taus
        .par_iter()
        .map(|&tau| {
            let mut best = (T::lit(f64::INFINITY), ts[0], tau);
            for &t in &ts {
                let v = l2_increment(spec, t, tau)?;
                if v < best.0 {
                    best = (v, t, tau);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (T::lit(f64::INFINITY), ts[0], taus[0]);
    for r in rows {
        let r = r?;
        if r.0 < best.0 {
            best = r;
        }
    }
    let (c, argmin_t, argmin_tau) = best;
    if !(c > grid.tol) {
        return Err(Error::Inconclusive {
            c: c.as_f64(),
            tol: grid.tol.as_f64(),
        });
    }
    Ok(MsFalsification {
        c,
        argmin_t,
        argmin_tau,
        epsilon_bound: c.sqrt(),
        grid: *grid,
        n_evaluations: taus.len() * ts.len(),
        verdict: format!(
            "not mean-square almost periodic on tested range: no epsilon-almost period in [{}, {}] for epsilon < {:.6}",
            grid.tau_min.as_f64(),
            grid.tau_max.as_f64(),
            c.sqrt().as_f64()
        ),
    })
}
