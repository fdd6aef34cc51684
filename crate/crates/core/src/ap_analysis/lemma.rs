use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::estimators::{ProcessSampler, MIN_PATHS};
use crate::sampler::{PathRng, GENERATOR_ID};
use crate::Real;

const CHUNK: usize = 1024;
const BAND: f64 = 4.0;

/// Probe times `t_1 < t_2 < …` and a probe direction `x*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSequence<T: Real> {
    pub times: Vec<T>,
    pub functional: Vec<T>,
}

impl<T: Real> ProbeSequence<T> {
    pub fn new(times: Vec<T>, functional: Vec<T>) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid(
                "probe times must be strictly increasing with at least two entries",
            ));
        }
        if functional.is_empty() || functional.iter().any(|v| !v.is_finite()) {
            return Err(invalid("probe functional must be a nonempty finite vector"));
        }
        Ok(Self { times, functional })
    }

    /// `t_n = n·spacing`, `n = 1..=count`, scalar functional `1`.
    pub fn scalar_arithmetic(spacing: T, count: usize) -> Result<Self> {
        Self::new(
            (1..=count).map(|n| spacing * T::from_usize_lossy(n)).collect(),
            vec![T::one()],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaOptions<T: Real> {
    /// Off-diagonal entries with `|n - m| >= gap` must vanish.
    pub gap: usize,
    pub cov_tol: T,
    /// `Var‖X_{t_m}‖` must stay above this.
    pub var_margin: T,
}

impl<T: Real> Default for LemmaOptions<T> {
    fn default() -> Self {
        Self {
            gap: 10,
            cov_tol: T::lit(1e-4),
            var_margin: T::lit(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LemmaVerdict {
    /// Covariances decorrelate and the norm variance stays positive, so the
    /// process is not mean-square almost periodic.
    HypothesesSatisfied,
    /// A hypothesis clearly fails; no conclusion about almost periodicity.
    HypothesesFail,
    /// A confidence band straddles a threshold.
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport<T: Real> {
    pub probe: ProbeSequence<T>,
    pub options: LemmaOptions<T>,
    /// `C_{nm} = Cov(⟨x*, X_{t_n}⟩, ⟨x*, X_{t_m}⟩)`, row-major.
    pub cov: Vec<Vec<T>>,
    /// Standard errors of `cov`, all zero when it is closed form.
    pub cov_se: Vec<Vec<T>>,
    pub cov_closed_form: bool,
    /// `max |C_{nm}|` over `|n - m| >= gap`.
    pub max_offdiag: T,
    pub max_offdiag_se: T,
    /// Monte Carlo `Var‖X_{t_m}‖`.
    pub norm_variance: Vec<T>,
    pub norm_variance_se: Vec<T>,
    /// `v(1 - 2/π)` for centered scalar laws.
    pub norm_variance_exact: Option<Vec<T>>,
    /// `Var⟨x*, X_{t_m}⟩ = C_{mm}`.
    pub probe_variance: Vec<T>,
    pub cov_condition: LemmaVerdict,
    pub var_condition: LemmaVerdict,
    pub verdict: LemmaVerdict,
    pub n_mc: usize,
    pub seed: u64,
    pub generator: String,
    pub sampler: String,
}

#[derive(Clone)]
struct Sums<T: Real> {
    /// Raw moments 1..4 of `‖X_{t_m}‖` per m.
    r: [Vec<T>; 4],
    /// Sums of projections and their cross products.
    p: Vec<T>,
    pp: DMatrix<T>,
    n: usize,
}

impl<T: Real> Sums<T> {
    fn zeros(k: usize, with_products: bool) -> Self {
        let kk = if with_products { k } else { 0 };
        Self {
            r: [
                vec![T::zero(); k],
                vec![T::zero(); k],
                vec![T::zero(); k],
                vec![T::zero(); k],
            ],
            p: vec![T::zero(); kk],
            pp: DMatrix::zeros(kk, kk),
            n: 0,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.r.iter_mut().zip(&other.r) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (x, y) in self.p.iter_mut().zip(&other.p) {
            *x += *y;
        }
        self.pp += &other.pp;
        self.n += other.n;
        self
    }
}

fn pairwise_merge<T: Real>(parts: &[Sums<T>]) -> Sums<T> {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let mid = parts.len() / 2;
    pairwise_merge(&parts[..mid]).merge(&pairwise_merge(&parts[mid..]))
}

fn classify(clearly_ok: bool, clearly_bad: bool) -> LemmaVerdict {
    if clearly_ok {
        LemmaVerdict::HypothesesSatisfied
    } else if clearly_bad {
        LemmaVerdict::HypothesesFail
    } else {
        LemmaVerdict::Undecided
    }
}

/// Checks the two hypotheses of the decorrelation criterion along the probe:
/// `C_{nm} → 0` for `|n - m|` large and `Var‖X_{t_m}‖` bounded away from 0.
/// `C` is closed form when the sampler's kernel is known; otherwise both are
/// Monte Carlo with `4·SE` bands.
#[allow(clippy::needless_range_loop)]
pub fn lemma_check<T: Real>(
    sampler: &ProcessSampler<T>,
    probe: &ProbeSequence<T>,
    n_mc: usize,
    seed: u64,
    opts: &LemmaOptions<T>,
) -> Result<LemmaReport<T>> {
    let d = sampler.dim();
    if probe.functional.len() != d {
        return Err(invalid(format!(
            "probe functional has length {}, process dimension is {d}",
            probe.functional.len()
        )));
    }
    if n_mc < MIN_PATHS {
        return Err(invalid(format!("need at least {MIN_PATHS} paths, got {n_mc}")));
    }
    let k = probe.times.len();
    if opts.gap == 0 || opts.gap >= k {
        return Err(invalid(format!("gap {} needs more than {} probe times", opts.gap, k)));
    }
    let x = &DVector::from_column_slice(&probe.functional);
    let spec = sampler.kernel_spec();
    let means: Vec<DVector<T>> = probe.times.iter().map(|&t| sampler.mean(t)).collect::<Result<_>>()?;

    let prepared = sampler.prepare(&probe.times)?;
    let with_products = spec.is_none();
    let chunks = n_mc.div_ceil(CHUNK);
    let parts: Vec<Result<Sums<T>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = Sums::zeros(k, with_products);
            let mut proj = vec![T::zero(); k];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_mc) {
                let xs = prepared.draw(&mut PathRng::new(seed, i as u64))?;
                for (m, v) in xs.iter().enumerate() {
                    let r = v.norm();
                    let r2 = r * r;
                    s.r[0][m] += r;
                    s.r[1][m] += r2;
                    s.r[2][m] += r2 * r;
                    s.r[3][m] += r2 * r2;
                    if with_products {
                        proj[m] = (v - &means[m]).dot(x);
                    }
                }
                if with_products {
                    for a in 0..k {
                        s.p[a] += proj[a];
                        for b in a..k {
                            s.pp[(a, b)] += proj[a] * proj[b];
                        }
                    }
                }
                s.n += 1;
            }
            Ok(s)
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let sums = pairwise_merge(&parts);
    let n = T::from_usize_lossy(n_mc);

    let mut norm_variance = Vec::with_capacity(k);
    let mut norm_variance_se = Vec::with_capacity(k);
    for m in 0..k {
        let mu = sums.r[0][m] / n;
        let e2 = sums.r[1][m] / n;
        let e3 = sums.r[2][m] / n;
        let e4 = sums.r[3][m] / n;
        let var = ((e2 - mu * mu) * n / (n - T::one())).max(T::zero());
        let m4 = (e4 - T::lit(4.0) * mu * e3 + T::lit(6.0) * mu * mu * e2 - T::lit(3.0) * mu.powi(4)).max(T::zero());
        norm_variance.push(var);
        norm_variance_se.push(((m4 - var * var).max(T::zero()) / n).sqrt());
    }

    let mut cov = vec![vec![T::zero(); k]; k];
    let mut cov_se = vec![vec![T::zero(); k]; k];
    match &spec {
        Some(spec) => {
            for a in 0..k {
                for b in 0..k {
                    cov[a][b] = x.dot(&(spec.kernel(probe.times[a], probe.times[b]) * x));
                }
            }
        }
        None => {
            // Products are centered at the model mean; SE from the Gaussian
            // fourth-moment identity Var(YZ) = C_aa C_bb + C_ab².
            for a in 0..k {
                for b in a..k {
                    let c = sums.pp[(a, b)] / n;
                    cov[a][b] = c;
                    cov[b][a] = c;
                }
            }
            for a in 0..k {
                for b in 0..k {
                    let v = cov[a][a] * cov[b][b] + cov[a][b] * cov[a][b];
                    cov_se[a][b] = (v.max(T::zero()) / n).sqrt();
                }
            }
        }
    }

    let mut max_offdiag = T::zero();
    let mut max_offdiag_se = T::zero();
    let mut upper_band = T::zero();
    for a in 0..k {
        for b in 0..k {
            if a.abs_diff(b) >= opts.gap {
                max_offdiag = max_offdiag.max(cov[a][b].abs());
                max_offdiag_se = max_offdiag_se.max(cov_se[a][b]);
                upper_band = upper_band.max(cov[a][b].abs() + T::lit(BAND) * cov_se[a][b]);
            }
        }
    }
    let lower_band = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| a.abs_diff(b) >= opts.gap).map(move |b| (a, b)))
        .map(|(a, b)| cov[a][b].abs() - T::lit(BAND) * cov_se[a][b])
        .fold(T::zero(), |acc, v| acc.max(v));
    let cov_condition = classify(upper_band < opts.cov_tol, lower_band >= opts.cov_tol);

    let band = T::lit(BAND);
    let var_lo = (0..k)
        .map(|m| norm_variance[m] - band * norm_variance_se[m])
        .fold(T::lit(f64::INFINITY), |a, b| a.min(b));
    let var_hi_min = (0..k)
        .map(|m| norm_variance[m] + band * norm_variance_se[m])
        .fold(T::lit(f64::INFINITY), |a, b| a.min(b));
    let var_condition = classify(var_lo > opts.var_margin, var_hi_min <= opts.var_margin);

    let verdict = match (cov_condition, var_condition) {
        (LemmaVerdict::HypothesesSatisfied, LemmaVerdict::HypothesesSatisfied) => LemmaVerdict::HypothesesSatisfied,
        (LemmaVerdict::HypothesesFail, _) | (_, LemmaVerdict::HypothesesFail) => LemmaVerdict::HypothesesFail,
        _ => LemmaVerdict::Undecided,
    };

    let norm_variance_exact = match &spec {
        Some(spec) if d == 1 && means.iter().all(|m| m[0] == T::zero()) => Some(
            probe
                .times
                .iter()
                .map(|&t| spec.variance(t)[(0, 0)] * (T::one() - T::lit(2.0) / T::pi()))
                .collect(),
        ),
        _ => None,
    };

    Ok(LemmaReport {
        probe: probe.clone(),
        options: *opts,
        probe_variance: (0..k).map(|m| cov[m][m]).collect(),
        cov,
        cov_se,
        cov_closed_form: spec.is_some(),
        max_offdiag,
        max_offdiag_se,
        norm_variance,
        norm_variance_se,
        norm_variance_exact,
        cov_condition,
        var_condition,
        verdict,
        n_mc,
        seed,
        generator: GENERATOR_ID.to_string(),
        sampler: sampler.describe(),
    })
}
