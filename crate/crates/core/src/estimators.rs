//! Monte Carlo estimates with standard errors.
//!
//! Path `i` of an `n`-path estimate always draws from stream `i` of the seed,
//! draws run in parallel and are reduced in path order by pairwise summation,
//! so an estimate is a pure function of `(sampler, times, n, seed)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::evolution::{propagator, EvolutionSystem};
use crate::gp_core::{marginals, GaussianProcessSpec, OuParams};
use crate::sampler::{ou_path, periodic_path, EulerPlan, InitialLaw, MarginalFactor, PathRng, GENERATOR_ID};
use crate::stats::mean_and_se;
use crate::Real;

/// Smallest path count accepted by the estimators.
pub const MIN_PATHS: usize = 100;

/// Euler–Maruyama configuration: integrate from `start` with the given step.
#[derive(Debug, Clone)]
pub struct EulerSampler<T: Real> {
    pub system: EvolutionSystem<T>,
    pub step: T,
    pub start: T,
    pub init: InitialLaw<T>,
}

/// How paths are produced.
#[derive(Debug, Clone)]
pub enum ProcessSampler<T: Real> {
    OuExact(OuParams<T>),
    PeriodicExact,
    /// Joint Gaussian draws from a kernel.
    Gaussian(GaussianProcessSpec<T>),
    Euler(EulerSampler<T>),
}

impl<T: Real> ProcessSampler<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::OuExact(_) | Self::PeriodicExact => 1,
            Self::Gaussian(spec) => spec.dim(),
            Self::Euler(e) => e.system.dim_state(),
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Self::OuExact(_) | Self::PeriodicExact => "ExactRecursion",
            Self::Gaussian(_) => "MarginalFactor",
            Self::Euler(_) => "EulerMaruyama",
        }
    }

    /// Canonical description; hashed into every estimate.
    pub fn describe(&self) -> String {
        match self {
            Self::OuExact(p) => format!("ou(alpha={:?}, sigma={:?})", p.alpha().as_f64(), p.sigma().as_f64()),
            Self::PeriodicExact => "periodic_example".to_string(),
            Self::Gaussian(spec) => format!("gaussian({}, dim={})", spec.name(), spec.dim()),
            Self::Euler(e) => format!(
                "euler({}, step={:?}, start={:?}, init={})",
                e.system.name(),
                e.step.as_f64(),
                e.start.as_f64(),
                match &e.init {
                    InitialLaw::Zero => "zero".to_string(),
                    InitialLaw::Fixed(x) => format!("fixed{:?}", x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
                    InitialLaw::Gaussian(c) =>
                        format!("gaussian{:?}", c.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
                }
            ),
        }
    }

    pub fn spec_hash(&self) -> String {
        hex::encode(Sha256::digest(self.describe().as_bytes()))
    }

    /// Closed-form law when one is available.
    pub fn kernel_spec(&self) -> Option<GaussianProcessSpec<T>> {
        match self {
            Self::OuExact(p) => Some(crate::gp_core::ou_spec(*p)),
            Self::PeriodicExact => Some(crate::gp_core::periodic_example_spec()),
            Self::Gaussian(spec) => Some(spec.clone()),
            Self::Euler(_) => None,
        }
    }

    /// `E X_t` of the sampled law.
    pub fn mean(&self, t: T) -> Result<DVector<T>> {
        match self {
            Self::OuExact(_) | Self::PeriodicExact => Ok(DVector::zeros(1)),
            Self::Gaussian(spec) => Ok(spec.mean(t)),
            Self::Euler(e) => match &e.init {
                InitialLaw::Fixed(x0) if t > e.start => Ok(propagator(&e.system, e.start, t, e.step)?.u * x0),
                InitialLaw::Fixed(x0) => Ok(x0.clone()),
                _ => Ok(DVector::zeros(e.system.dim_state())),
            },
        }
    }

    /// Fixes the observation times; draws come back in the order given.
    pub fn prepare(&self, times: &[T]) -> Result<PreparedSampler<'_, T>> {
        if times.is_empty() {
            return Err(invalid("need at least one observation time"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("observation times must be finite"));
        }
        let mut unique = times.to_vec();
        unique.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        unique.dedup();
        let slot = times
            .iter()
            .map(|t| unique.iter().position(|u| u == t).expect("present"))
            .collect();
        let kind = match self {
            Self::OuExact(p) => Prepared::Ou(*p),
            Self::PeriodicExact => Prepared::Periodic,
            Self::Gaussian(spec) => Prepared::Factor(MarginalFactor::new(&marginals(spec, &unique)?)?, spec.dim()),
            Self::Euler(e) => {
                if !(e.step > T::zero()) {
                    return Err(invalid("Euler step must be positive"));
                }
                if unique[0] < e.start {
                    return Err(invalid("observation time precedes the Euler start time"));
                }
                let last = *unique.last().expect("nonempty");
                let n = ((last - e.start) / e.step).floor().to_usize().unwrap_or(0);
                let mut nodes: Vec<T> = (0..=n).map(|k| e.start + e.step * T::from_usize_lossy(k)).collect();
                nodes.extend(unique.iter().copied());
                nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                nodes.dedup();
                let at = unique
                    .iter()
                    .map(|u| nodes.iter().position(|x| x == u).expect("present"))
                    .collect();
                Prepared::Euler(EulerPlan::new(&e.system, nodes, &e.init)?, at, e.system.dim_state())
            }
        };
        Ok(PreparedSampler {
            unique,
            slot,
            kind,
            _sampler: self,
        })
    }
}

enum Prepared<T: Real> {
    Ou(OuParams<T>),
    Periodic,
    Factor(MarginalFactor<T>, usize),
    Euler(EulerPlan<T>, Vec<usize>, usize),
}

pub struct PreparedSampler<'a, T: Real> {
    unique: Vec<T>,
    slot: Vec<usize>,
    kind: Prepared<T>,
    _sampler: &'a ProcessSampler<T>,
}

impl<T: Real> PreparedSampler<'_, T> {
    /// One joint draw of `(X_{t_1}, …, X_{t_k})`.
    pub fn draw(&self, rng: &mut PathRng) -> Result<Vec<DVector<T>>> {
        let at_unique: Vec<DVector<T>> = match &self.kind {
            Prepared::Ou(p) => ou_path(p, &self.unique, rng)
                .into_iter()
                .map(|x| DVector::from_element(1, x))
                .collect(),
            Prepared::Periodic => periodic_path(&self.unique, rng)
                .into_iter()
                .map(|x| DVector::from_element(1, x))
                .collect(),
            Prepared::Factor(f, d) => {
                let v = f.draw(rng);
                (0..self.unique.len()).map(|i| v.rows(i * d, *d).into_owned()).collect()
            }
            Prepared::Euler(plan, at, d) => {
                let mut out = vec![DVector::zeros(*d); self.unique.len()];
                let mut next = 0;
                plan.run(rng, |k, x| {
                    while next < at.len() && at[next] == k {
                        out[next] = DVector::from_column_slice(x);
                        next += 1;
                    }
                })?;
                out
            }
        };
        Ok(self.slot.iter().map(|&i| at_unique[i].clone()).collect())
    }

    /// Draws paths `0..n` in parallel, mapping each through `f`, in path order.
    pub fn map_paths<R: Send>(
        &self,
        n: usize,
        seed: u64,
        f: impl Fn(Vec<DVector<T>>) -> R + Sync + Send,
    ) -> Result<Vec<R>> {
        let results: Vec<Result<R>> = (0..n)
            .into_par_iter()
            .map(|i| self.draw(&mut PathRng::new(seed, i as u64)).map(&f))
            .collect();
        results.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate<T: Real> {
    pub value: T,
    pub std_error: T,
    pub n: usize,
    pub seed: u64,
    pub method: String,
    pub generator: String,
    pub sampler: String,
    pub spec_hash: String,
    /// Closed-form value when the sampled law is known.
    pub exact: Option<T>,
}

impl<T: Real> McEstimate<T> {
    fn from_samples(xs: &[T], sampler: &ProcessSampler<T>, seed: u64, exact: Option<T>) -> Self {
        let (value, std_error) = mean_and_se(xs);
        Self {
            value,
            std_error,
            n: xs.len(),
            seed,
            method: sampler.method().to_string(),
            generator: GENERATOR_ID.to_string(),
            sampler: sampler.describe(),
            spec_hash: sampler.spec_hash(),
            exact,
        }
    }

    /// `value ± k·std_error`.
    pub fn interval(&self, k: T) -> (T, T) {
        (self.value - k * self.std_error, self.value + k * self.std_error)
    }

    pub fn covers(&self, truth: T, k: T) -> bool {
        let (lo, hi) = self.interval(k);
        lo <= truth && truth <= hi
    }

    /// Whether the closed-form value, if any, lies within `k` standard errors.
    pub fn agrees_with_exact(&self, k: T) -> Option<bool> {
        self.exact.map(|e| self.covers(e, k))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_PATHS {
        return Err(invalid(format!("need at least {MIN_PATHS} paths, got {n}")));
    }
    Ok(())
}

/// `tr Cov(X_{t1}, X_{t2})` from `n` paths, centered at the model mean.
/// The standard error is that of the mean of the centered products.
pub fn mc_cov<T: Real>(sampler: &ProcessSampler<T>, t1: T, t2: T, n: usize, seed: u64) -> Result<McEstimate<T>> {
    check_n(n)?;
    let m1 = sampler.mean(t1)?;
    let m2 = sampler.mean(t2)?;
    let prepared = sampler.prepare(&[t1, t2])?;
    let products = prepared.map_paths(n, seed, |x| (&x[0] - &m1).dot(&(&x[1] - &m2)))?;
    let exact = sampler.kernel_spec().map(|k| k.kernel(t1, t2).trace());
    Ok(McEstimate::from_samples(&products, sampler, seed, exact))
}

/// `E‖X_t - m‖^p` for `p ∈ {2, 4}`, `m` the model mean.
fn centered_moment_exact<T: Real>(cov: &DMatrix<T>, p: u32) -> T {
    let tr = cov.trace();
    match p {
        2 => tr,
        _ => tr * tr + T::lit(2.0) * (cov * cov).trace(),
    }
}

/// `E‖X_t‖^p`, `p ∈ {2, 4}`. For centered Gaussian laws the exact value is
/// `tr C` or `(tr C)² + 2 tr C²` (`3v²` in the scalar case).
pub fn mc_moment<T: Real>(sampler: &ProcessSampler<T>, t: T, p: u32, n: usize, seed: u64) -> Result<McEstimate<T>> {
    if p != 2 && p != 4 {
        return Err(invalid(format!("moment order must be 2 or 4, got {p}")));
    }
    check_n(n)?;
    let prepared = sampler.prepare(&[t])?;
    let values = prepared.map_paths(n, seed, |x| {
        let sq = x[0].dot(&x[0]);
        if p == 2 {
            sq
        } else {
            sq * sq
        }
    })?;
    let exact = match sampler.kernel_spec() {
        Some(k) if k.mean(t).iter().all(|m| *m == T::zero()) => Some(centered_moment_exact(&k.variance(t), p)),
        _ => None,
    };
    Ok(McEstimate::from_samples(&values, sampler, seed, exact))
}

/// Uniform fourth-moment bound over a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct UiReport<T: Real> {
    pub times: Vec<T>,
    pub per_time: Vec<McEstimate<T>>,
    pub sup: T,
    /// `sup_t (estimate + 4 SE)`.
    pub bound: T,
    pub bounded: bool,
    pub failure: Option<String>,
}

/// Estimates `E‖X_t‖⁴` jointly along `t_grid` and reports the supremum. A finite
/// uniform bound is the de la Vallée Poussin proxy for uniform integrability of
/// `‖X_t‖²`; divergence or non-finite moments are reported as a failure.
pub fn ui_proxy<T: Real>(sampler: &ProcessSampler<T>, t_grid: &[T], n: usize, seed: u64) -> Result<UiReport<T>> {
    check_n(n)?;
    let fail = |msg: String| UiReport {
        times: t_grid.to_vec(),
        per_time: Vec::new(),
        sup: T::zero(),
        bound: T::zero(),
        bounded: false,
        failure: Some(msg),
    };
    let prepared = sampler.prepare(t_grid)?;
    let paths = match prepared.map_paths(n, seed, |x| {
        x.iter().map(|v| v.norm_squared().powi(2)).collect::<Vec<T>>()
    }) {
        Ok(p) => p,
        Err(e @ Error::Diverged { .. }) => return Ok(fail(e.to_string())),
        Err(e) => return Err(e),
    };
    let spec = sampler.kernel_spec();
    let four = T::lit(4.0);
    let mut per_time = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let column: Vec<T> = paths.iter().map(|p| p[j]).collect();
        let exact = match &spec {
            Some(k) if k.mean(t).iter().all(|m| *m == T::zero()) => Some(centered_moment_exact(&k.variance(t), 4)),
            _ => None,
        };
        per_time.push(McEstimate::from_samples(&column, sampler, seed, exact));
    }
    if let Some(bad) = per_time
        .iter()
        .position(|e| !(e.value.is_finite() && e.std_error.is_finite()))
    {
        return Ok(fail(format!(
            "fourth moment is not finite at t = {}",
            t_grid[bad].as_f64()
        )));
    }
    let sup = per_time.iter().fold(T::zero(), |a, e| a.max(e.value));
    let bound = per_time
        .iter()
        .fold(T::zero(), |a, e| a.max(e.value + four * e.std_error));
    Ok(UiReport {
        times: t_grid.to_vec(),
        per_time,
        sup,
        bound,
        bounded: true,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ou11() -> ProcessSampler<f64> {
        ProcessSampler::OuExact(OuParams::new(1.0, 1.0).unwrap())
    }

    #[test]
    fn ou_cov_at_ln2() {
        let est = mc_cov(&ou11(), 0.0, std::f64::consts::LN_2, 100_000, 1).unwrap();
        assert!(est.covers(0.5, 4.0), "{est:?}");
        assert_eq!(est.exact, Some(0.5));
        assert_eq!(est.n, 100_000);
    }

    #[test]
    fn estimates_are_reproducible() {
        let a = mc_cov(&ou11(), 1.0, 2.0, 1000, 9).unwrap();
        let b = mc_cov(&ou11(), 1.0, 2.0, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn zero_process_is_exactly_zero() {
        let spec = GaussianProcessSpec::scalar("zero", |_: f64, _: f64| 0.0);
        let est = mc_cov(&ProcessSampler::Gaussian(spec), 0.0, 1.0, 500, 3).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn rejects_small_n_and_bad_order() {
        assert!(mc_cov(&ou11(), 0.0, 1.0, 99, 1).is_err());
        assert!(mc_moment(&ou11(), 0.0, 3, 1000, 1).is_err());
    }

    #[test]
    fn second_moment_equals_diagonal_covariance() {
        let s = ProcessSampler::PeriodicExact;
        let a = mc_moment(&s, 1.3, 2, 2000, 5).unwrap();
        let b = mc_cov(&s, 1.3, 1.3, 2000, 5).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.std_error, b.std_error);
    }

    #[test]
    fn fourth_moments() {
        let est = mc_moment(&ou11(), 2.0, 4, 200_000, 17).unwrap();
        assert_eq!(est.exact, Some(3.0));
        assert!(est.covers(3.0, 4.0), "{est:?}");
        let est = mc_moment(&ProcessSampler::<f64>::PeriodicExact, 2.0, 4, 200_000, 17).unwrap();
        assert!((est.exact.unwrap() - 0.75).abs() < 1e-15);
        assert!(est.covers(0.75, 4.0), "{est:?}");
    }

    #[test]
    fn vector_moment_formula() {
        // C = diag(1, 2): E‖X‖⁴ = 9 + 2·5 = 19.
        let spec = GaussianProcessSpec::zero_mean("diag", 2, |s: f64, t: f64| {
            if s == t {
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))
            } else {
                DMatrix::zeros(2, 2)
            }
        })
        .unwrap();
        let est = mc_moment(&ProcessSampler::Gaussian(spec), 0.0, 4, 200_000, 2).unwrap();
        assert_eq!(est.exact, Some(19.0));
        assert!(est.covers(19.0, 4.0), "{est:?}");
    }

    #[test]
    fn draw_order_follows_request() {
        let s = ou11();
        let p = s.prepare(&[2.0, 0.0, 2.0]).unwrap();
        let x = p.draw(&mut PathRng::new(1, 0)).unwrap();
        assert_eq!(x[0], x[2]);
        let q = s.prepare(&[0.0, 2.0]).unwrap();
        let y = q.draw(&mut PathRng::new(1, 0)).unwrap();
        assert_eq!(x[1], y[0]);
        assert_eq!(x[0], y[1]);
    }

    #[test]
    fn ui_proxy_flat_for_ou() {
        let grid: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
        let rep = ui_proxy(&ou11(), &grid, 20_000, 4).unwrap();
        assert!(rep.bounded);
        assert!((rep.sup - 3.0).abs() < 0.3, "{}", rep.sup);
        assert!(rep.per_time.iter().all(|e| e.covers(3.0, 4.0)));
    }

    #[test]
    fn ui_proxy_fails_for_unstable_system() {
        let sys = EvolutionSystem::autonomous(
            "unstable",
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let s = ProcessSampler::Euler(EulerSampler {
            system: sys,
            step: 1e-2,
            start: 0.0,
            init: InitialLaw::Zero,
        });
        let grid: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
        let rep = ui_proxy(&s, &grid, 200, 4).unwrap();
        assert!(!rep.bounded);
        assert!(rep.failure.unwrap().contains("diverged"));
    }

    #[test]
    fn euler_mean_follows_propagator() {
        let sys = EvolutionSystem::ou(OuParams::<f64>::new(1.0, 1.0).unwrap());
        let s = ProcessSampler::Euler(EulerSampler {
            system: sys,
            step: 1e-3,
            start: 0.0,
            init: InitialLaw::Fixed(DVector::from_element(1, 2.0)),
        });
        let m = s.mean(1.0).unwrap()[0];
        assert!((m - 2.0 * (-1.0f64).exp()).abs() < 1e-10);
    }
}
