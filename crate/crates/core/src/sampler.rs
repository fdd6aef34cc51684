//! Seeded path samplers.
//!
//! Every path owns its RNG stream: ChaCha8 keyed by the batch seed with the
//! path index as stream id, so path `i` is the same whatever the batch size
//! or thread count. Standard normals use the ziggurat sampler of `rand_distr`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::evolution::{EvolutionSystem, StochasticConvolution};
use crate::gp_core::{periodic_example_propagator, MarginalGaussian, OuParams};
use crate::linalg::{self, spectral_norm, PSD_REL_TOL};
use crate::table::CsvTable;
use crate::Real;

/// Recorded in every randomized output.
pub const GENERATOR_ID: &str = "chacha8(seed; stream=path index)/ziggurat-normal";

/// Euler paths beyond this magnitude are reported as diverged.
const DIVERGENCE_LIMIT: f64 = 1e6;

pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    #[inline]
    pub fn normal<T: Real>(&mut self) -> T {
        T::lit(self.0.sample::<f64, _>(StandardNormal))
    }

    pub fn normals<T: Real>(&mut self, n: usize) -> DVector<T> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }
}

/// Uniform grid `t0, t0 + step, …, t0 + n·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid<T: Real> {
    pub t0: T,
    pub step: T,
    pub n: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(t0: T, step: T, n: usize) -> Result<Self> {
        if !(step > T::zero() && step.is_finite()) || !t0.is_finite() {
            return Err(invalid("grid step must be positive and finite"));
        }
        Ok(Self { t0, step, n })
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + self.step * T::from_usize_lossy(i)
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.n).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleMethod {
    ExactRecursion,
    EulerMaruyama,
    MarginalFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<T: Real> {
    pub grid: Grid<T>,
    /// `(n + 1) × d`, one row per grid time.
    pub values: DMatrix<T>,
    pub seed: u64,
    pub method: SampleMethod,
}

impl<T: Real> PathSample<T> {
    /// Columns `t, x_1..x_d`, metadata as `#` comments.
    pub fn to_table(&self) -> CsvTable {
        let d = self.values.ncols();
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=d).map(|i| format!("x_{i}")));
        let names: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut table = CsvTable::new(&names)
            .comment(format!("seed={}", self.seed))
            .comment(format!("method={:?}", self.method))
            .comment(format!("generator={GENERATOR_ID}"));
        for i in 0..=self.grid.n {
            let mut row = vec![self.grid.time(i).as_f64()];
            row.extend(self.values.row(i).iter().map(|v| v.as_f64()));
            table.push(row);
        }
        table
    }
}

fn check_sorted<T: Real>(times: &[T]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("need at least one sample time"));
    }
    if times.windows(2).any(|w| !(w[0] <= w[1])) || times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("sample times must be finite and nondecreasing"));
    }
    Ok(())
}

/// Exact OU recursion at nondecreasing `times`, started in the stationary law.
pub(crate) fn ou_path<T: Real>(params: &OuParams<T>, times: &[T], rng: &mut PathRng) -> Vec<T> {
    let var = params.variance();
    let mut x = var.sqrt() * rng.normal::<T>();
    let mut out = Vec::with_capacity(times.len());
    out.push(x);
    for w in times.windows(2) {
        let u = (-params.alpha() * (w[1] - w[0])).exp();
        let noise_var = var * (T::one() - u * u);
        x = u * x + noise_var.max(T::zero()).sqrt() * rng.normal::<T>();
        out.push(x);
    }
    out
}

/// Exact Gauss–Markov recursion for the periodic example, stationary variance ½.
pub(crate) fn periodic_path<T: Real>(times: &[T], rng: &mut PathRng) -> Vec<T> {
    let half = T::lit(0.5);
    let mut x = half.sqrt() * rng.normal::<T>();
    let mut out = Vec::with_capacity(times.len());
    out.push(x);
    for w in times.windows(2) {
        let u = periodic_transition(w[0], w[1] - w[0]);
        x = u * x + (half * (T::one() - u * u)).max(T::zero()).sqrt() * rng.normal::<T>();
        out.push(x);
    }
    out
}

/// Transition factor `u = e^{-h + sin(t + h) - sin t}` of the periodic example.
pub fn periodic_transition<T: Real>(t: T, h: T) -> T {
    periodic_example_propagator(t, t + h)
}

fn scalar_path_sample<T: Real>(grid: Grid<T>, seed: u64, xs: Vec<T>) -> PathSample<T> {
    PathSample {
        grid,
        values: DMatrix::from_vec(xs.len(), 1, xs),
        seed,
        method: SampleMethod::ExactRecursion,
    }
}

/// Stationary OU path: `X_{t0} ~ N(0, σ²)`,
/// `X_{t+h} = e^{-αh} X_t + N(0, σ²(1 - e^{-2αh}))`.
pub fn sample_ou_exact<T: Real>(params: &OuParams<T>, grid: Grid<T>, seed: u64) -> PathSample<T> {
    let mut rng = PathRng::new(seed, 0);
    scalar_path_sample(grid, seed, ou_path(params, &grid.times(), &mut rng))
}

/// Periodic-example path: `X_{t0} ~ N(0, ½)`, `X_{t+h} = u X_t + N(0, ½(1 - u²))`.
pub fn sample_periodic_exact<T: Real>(grid: Grid<T>, seed: u64) -> PathSample<T> {
    let mut rng = PathRng::new(seed, 0);
    scalar_path_sample(grid, seed, periodic_path(&grid.times(), &mut rng))
}

/// Law of the Euler–Maruyama state at the first node.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw<T: Real> {
    Zero,
    Fixed(DVector<T>),
    /// Centered Gaussian with this covariance.
    Gaussian(DMatrix<T>),
}

impl<T: Real> InitialLaw<T> {
    /// The law of the L²-bounded solution at `t0`.
    pub fn stationary(conv: &StochasticConvolution<T>, t0: T) -> Result<Self> {
        Ok(Self::Gaussian(conv.sigma(t0)?))
    }
}

/// Precomputed coefficients of an Euler–Maruyama run over fixed nodes.
#[derive(Debug, Clone)]
pub(crate) struct EulerPlan<T: Real> {
    d: usize,
    m: usize,
    nodes: Vec<T>,
    /// Row-major `d×d` drift per step.
    drift: Vec<T>,
    /// Row-major `d×m` of `g(t_k) Q^{1/2} sqrt(h_k)` per step.
    noise: Vec<T>,
    h: Vec<T>,
    init_mean: DVector<T>,
    init_factor: Option<DMatrix<T>>,
}

impl<T: Real> EulerPlan<T> {
    pub(crate) fn new(sys: &EvolutionSystem<T>, nodes: Vec<T>, init: &InitialLaw<T>) -> Result<Self> {
        check_sorted(&nodes)?;
        let d = sys.dim_state();
        let m = sys.dim_noise();
        let q_half = linalg::psd_sqrt(sys.q(), T::lit(PSD_REL_TOL))?;
        let eye = DMatrix::<T>::identity(d, d);
        let two = T::lit(2.0);
        let steps = nodes.len() - 1;
        let mut drift = Vec::with_capacity(steps * d * d);
        let mut noise = Vec::with_capacity(steps * d * m);
        let mut h = Vec::with_capacity(steps);
        for w in nodes.windows(2) {
            let hk = w[1] - w[0];
            let a = sys.drift_checked(w[0])?;
            if hk > T::zero() && !(spectral_norm(&(&eye + &a * hk)) < two) {
                return Err(invalid(format!(
                    "Euler step {} too large for the drift at t = {}: need ‖I + hA‖ < 2",
                    hk.as_f64(),
                    w[0].as_f64()
                )));
            }
            let b = sys.noise_checked(w[0])? * &q_half * hk.max(T::zero()).sqrt();
            drift.extend(a.transpose().iter().copied());
            noise.extend(b.transpose().iter().copied());
            h.push(hk);
        }
        let (init_mean, init_factor) = match init {
            InitialLaw::Zero => (DVector::zeros(d), None),
            InitialLaw::Fixed(x) => {
                if x.len() != d {
                    return Err(invalid("initial state has wrong dimension"));
                }
                (x.clone(), None)
            }
            InitialLaw::Gaussian(c) => {
                if c.nrows() != d || c.ncols() != d {
                    return Err(invalid("initial covariance has wrong shape"));
                }
                (DVector::zeros(d), Some(linalg::psd_sqrt(c, T::lit(PSD_REL_TOL))?))
            }
        };
        Ok(Self {
            d,
            m,
            nodes,
            drift,
            noise,
            h,
            init_mean,
            init_factor,
        })
    }

    /// Runs one path, calling `record(node_index, state)` at every node.
    pub(crate) fn run(&self, rng: &mut PathRng, mut record: impl FnMut(usize, &[T])) -> Result<()> {
        let (d, m) = (self.d, self.m);
        let mut x: Vec<T> = match &self.init_factor {
            Some(f) => (&self.init_mean + f * rng.normals::<T>(d)).iter().copied().collect(),
            None => self.init_mean.iter().copied().collect(),
        };
        let mut next = vec![T::zero(); d];
        let mut z = vec![T::zero(); m];
        let limit = T::lit(DIVERGENCE_LIMIT);
        record(0, &x);
        for k in 0..self.h.len() {
            let a = &self.drift[k * d * d..(k + 1) * d * d];
            let b = &self.noise[k * d * m..(k + 1) * d * m];
            for zj in z.iter_mut() {
                *zj = rng.normal();
            }
            for i in 0..d {
                let mut drift = T::zero();
                for j in 0..d {
                    drift += a[i * d + j] * x[j];
                }
                let mut shock = T::zero();
                for j in 0..m {
                    shock += b[i * m + j] * z[j];
                }
                next[i] = x[i] + self.h[k] * drift + shock;
            }
            std::mem::swap(&mut x, &mut next);
            if let Some(bad) = x.iter().find(|v| !(v.abs() <= limit)) {
                return Err(Error::Diverged {
                    t: self.nodes[k + 1].as_f64(),
                    value: bad.abs().as_f64(),
                });
            }
            record(k + 1, &x);
        }
        Ok(())
    }
}

/// Euler–Maruyama: `X_{t+h} = X_t + h A(t) X_t + g(t) Q^{1/2} sqrt(h) Z`.
pub fn sample_euler<T: Real>(
    sys: &EvolutionSystem<T>,
    grid: Grid<T>,
    init: &InitialLaw<T>,
    seed: u64,
) -> Result<PathSample<T>> {
    let plan = EulerPlan::new(sys, grid.times(), init)?;
    let d = sys.dim_state();
    let mut values = DMatrix::zeros(grid.n + 1, d);
    let mut rng = PathRng::new(seed, 0);
    plan.run(&mut rng, |k, x| {
        for (j, &v) in x.iter().enumerate() {
            values[(k, j)] = v;
        }
    })?;
    Ok(PathSample {
        grid,
        values,
        seed,
        method: SampleMethod::EulerMaruyama,
    })
}

/// Affine map `mean + S z` with `S` the symmetric square root of the covariance.
#[derive(Debug, Clone)]
pub struct MarginalFactor<T: Real> {
    mean: DVector<T>,
    factor: DMatrix<T>,
}

impl<T: Real> MarginalFactor<T> {
    pub fn new(mg: &MarginalGaussian<T>) -> Result<Self> {
        Ok(Self {
            mean: mg.mean.clone(),
            factor: linalg::psd_sqrt(&mg.cov, T::lit(PSD_REL_TOL))?,
        })
    }

    pub fn draw(&self, rng: &mut PathRng) -> DVector<T> {
        let z = rng.normals(self.mean.len());
        &self.mean + &self.factor * z
    }
}

/// `n_draws × len` matrix of draws from the marginal law; row `i` uses stream `i`.
pub fn sample_marginal<T: Real>(mg: &MarginalGaussian<T>, n_draws: usize, seed: u64) -> Result<DMatrix<T>> {
    sample_marginal_streams(mg, n_draws, seed, 0)
}

/// As [`sample_marginal`], with row `i` on stream `first_stream + i`.
pub fn sample_marginal_streams<T: Real>(
    mg: &MarginalGaussian<T>,
    n_draws: usize,
    seed: u64,
    first_stream: u64,
) -> Result<DMatrix<T>> {
    let f = MarginalFactor::new(mg)?;
    let k = mg.len();
    let rows: Vec<DVector<T>> = (0..n_draws)
        .into_par_iter()
        .map(|i| f.draw(&mut PathRng::new(seed, first_stream + i as u64)))
        .collect();
    Ok(DMatrix::from_fn(n_draws, k, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_core::{marginals, ou_spec};
    use crate::stats::mean_and_se;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let p = OuParams::new(1.0, 1.0).unwrap();
        let g = Grid::new(0.0, 0.1, 50).unwrap();
        let a = sample_ou_exact(&p, g, 11);
        let b = sample_ou_exact(&p, g, 11);
        assert_eq!(a.values.as_slice(), b.values.as_slice());
        let c = sample_ou_exact(&p, g, 12);
        assert_ne!(a.values.as_slice(), c.values.as_slice());
        assert_eq!(a.values.nrows(), 51);
        assert!(a.values.iter().all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn streams_are_independent_of_batch() {
        let mut r1 = PathRng::new(5, 3);
        let mut r2 = PathRng::new(5, 3);
        let a: f64 = r1.normal();
        let b: f64 = r2.normal();
        assert_eq!(a, b);
        let mut r3 = PathRng::new(5, 4);
        assert_ne!(a, r3.normal::<f64>());
    }

    #[test]
    fn periodic_transition_matches_propagator() {
        let u: f64 = periodic_transition(0.0, std::f64::consts::PI);
        assert!((u - (-std::f64::consts::PI).exp()).abs() < 1e-16);
    }

    #[test]
    fn euler_with_zero_coefficients_is_constant() {
        let sys = EvolutionSystem::autonomous(
            "still",
            DMatrix::<f64>::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.5, -2.0]);
        let path = sample_euler(&sys, Grid::new(0.0, 0.01, 100).unwrap(), &InitialLaw::Fixed(x0), 3).unwrap();
        for i in 0..=100 {
            assert_eq!(path.values[(i, 0)], 1.5);
            assert_eq!(path.values[(i, 1)], -2.0);
        }
    }

    #[test]
    fn euler_divergence_reported() {
        let sys = EvolutionSystem::autonomous(
            "grow",
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let err = sample_euler(&sys, Grid::new(0.0, 0.01, 3000).unwrap(), &InitialLaw::Zero, 1).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn euler_rejects_oversized_step() {
        let sys = EvolutionSystem::ou(OuParams::new(10.0, 1.0).unwrap());
        assert!(sample_euler(&sys, Grid::new(0.0, 0.5, 4).unwrap(), &InitialLaw::Zero, 1).is_err());
    }

    #[test]
    fn marginal_zero_covariance_returns_mean() {
        let mg = MarginalGaussian::new(
            vec![0.0, 1.0],
            1,
            DVector::from_vec(vec![0.3, -0.7]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let draws = sample_marginal(&mg, 50, 9).unwrap();
        for i in 0..50 {
            assert_eq!(draws[(i, 0)], 0.3);
            assert_eq!(draws[(i, 1)], -0.7);
        }
    }

    #[test]
    fn marginal_identity_covariance() {
        let mg = MarginalGaussian::new(vec![0.0, 1.0], 1, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let n = 100_000;
        let draws = sample_marginal(&mg, n, 21).unwrap();
        for (i, j, target) in [(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.0)] {
            let prods: Vec<f64> = (0..n).map(|r| draws[(r, i)] * draws[(r, j)]).collect();
            let (m, se) = mean_and_se(&prods);
            assert!((m - target).abs() < 4.0 * se, "({i},{j}) {m} ± {se}");
        }
    }

    #[test]
    fn marginal_ou_correlation() {
        let k = ou_spec(OuParams::new(1.0, 1.0).unwrap());
        let mg = marginals(&k, &[0.0, std::f64::consts::LN_2]).unwrap();
        let n = 100_000;
        let draws = sample_marginal(&mg, n, 4).unwrap();
        let prods: Vec<f64> = (0..n).map(|r| draws[(r, 0)] * draws[(r, 1)]).collect();
        let (m, se) = mean_and_se(&prods);
        assert!((m - 0.5).abs() < 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn path_csv_has_metadata() {
        let p = OuParams::new(1.0, 1.0).unwrap();
        let path = sample_ou_exact(&p, Grid::new(0.0, 0.5, 4).unwrap(), 42);
        let csv = path.to_table().to_csv();
        assert!(csv.starts_with("# seed=42\n# method=ExactRecursion\n"));
        let back = CsvTable::parse(&csv).unwrap();
        assert_eq!(back.columns, vec!["t", "x_1"]);
        assert_eq!(back.rows.len(), 5);
        assert_eq!(back.rows[2][1], path.values[(2, 0)]);
    }
}
