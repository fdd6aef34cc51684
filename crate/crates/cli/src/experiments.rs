//! One function per experiment kind.

use apsde_core::ap_analysis::{
    distribution_ap_check, lemma_check, ms_ap_falsify, scan_almost_periods, FalsifyGrid, LemmaOptions, LemmaVerdict,
    ProbeSequence, SampledFunction,
};
use apsde_core::estimators::{mc_cov, mc_moment, ui_proxy};
use apsde_core::evolution::{check_dissipativity, check_exponential_stability, StochasticConvolution};
use apsde_core::gp_core::l2_increment;
use apsde_core::linalg::frobenius;
use apsde_core::sampler::GENERATOR_ID;
use apsde_core::{CsvTable, Error};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    scalar, values, ApScanParams, ConfigError, DistApParams, Experiment, HypothesisParams, KernelTableParams,
    LemmaParams, MomentsParams, MsFalsifyParams, ScanTarget,
};
use crate::systems::{BuiltSystem, SystemKind};

/// Agreement required between the convolution covariance and a closed-form kernel.
pub const CONVOLUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Inconclusive,
    Violation,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Inconclusive => 2,
            Status::Violation => 3,
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(Error),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

pub type RunResult<T> = Result<T, RunError>;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub verdict: String,
    pub results: Value,
    /// `(file name, table)` pairs for CSV output.
    pub tables: Vec<(String, CsvTable)>,
}

fn to_json<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn metadata(table: CsvTable, seed: u64, n: usize, sampler: &str) -> CsvTable {
    table
        .comment(format!("seed={seed}"))
        .comment(format!("n={n}"))
        .comment(format!("generator={GENERATOR_ID}"))
        .comment(format!("sampler={sampler}"))
}

pub fn run(sys: &BuiltSystem, exp: &Experiment, seed: u64) -> RunResult<Outcome> {
    match exp {
        Experiment::KernelTable(p) => kernel_table(sys, p, seed),
        Experiment::ApScan(p) => ap_scan(sys, p),
        Experiment::MsFalsify(p) => ms_falsify(sys, p),
        Experiment::LemmaCheck(p) => lemma(sys, p, seed),
        Experiment::DistApCheck(p) => dist_ap(sys, p),
        Experiment::HypothesisCheck(p) => hypotheses(sys, p),
        Experiment::Moments(p) => moments(sys, p, seed),
    }
}

/// Kernel at `(t, t + τ)`, optionally against the convolution quadrature and
/// Monte Carlo. Row `i` uses seed `seed + i`.
pub fn kernel_table(sys: &BuiltSystem, p: &KernelTableParams, seed: u64) -> RunResult<Outcome> {
    let times = values(&p.times, "experiment.times")?;
    let lags = values(&p.lags, "experiment.lags")?;
    if times.is_empty() || lags.is_empty() || lags.iter().any(|l| !(*l >= 0.0)) {
        return Err(ConfigError::invalid("kernel-table needs nonempty times and nonnegative lags").into());
    }
    let spec = sys.spec()?;
    let conv = match (&sys.kind, p.convolution) {
        (SystemKind::Custom, _) | (_, false) => None,
        _ => Some(sys.convolution()?),
    };
    let sampler = if p.n_mc > 0 { Some(sys.exact_sampler()?) } else { None };

    let mut cols = vec!["t", "tau", "kernel"];
    if conv.is_some() {
        cols.extend(["convolution", "convolution_abs_err"]);
    }
    if sampler.is_some() {
        cols.extend(["mc", "mc_se", "within_4se"]);
    }
    let mut table = CsvTable::new(&cols);
    let mut rows = Vec::new();
    let (mut worst_conv, mut misses) = (0.0f64, 0usize);
    for (i, (t, tau)) in times
        .iter()
        .flat_map(|&t| lags.iter().map(move |&l| (t, l)))
        .enumerate()
    {
        let k = spec.kernel(t, t + tau).trace();
        let mut row = vec![t, tau, k];
        let mut entry = json!({"t": t, "tau": tau, "kernel": k});
        if let Some(c) = &conv {
            let v = c.covariance(t, t + tau)?.trace();
            worst_conv = worst_conv.max((v - k).abs());
            row.extend([v, (v - k).abs()]);
            entry["convolution"] = json!(v);
        }
        if let Some(s) = &sampler {
            let row_seed = seed.wrapping_add(i as u64);
            let est = mc_cov(s, t, t + tau, p.n_mc, row_seed)?;
            let hit = est.covers(k, 4.0);
            misses += usize::from(!hit);
            row.extend([est.value, est.std_error, f64::from(u8::from(hit))]);
            entry["monte_carlo"] = to_json(&est);
        }
        table.push(row);
        rows.push(entry);
    }
    let sampler_name = sampler.as_ref().map(|s| s.describe()).unwrap_or_default();
    let table = metadata(table, seed, p.n_mc, &sampler_name).comment("row_seed=seed+row");

    let conv_ok = worst_conv <= CONVOLUTION_TOL;
    let status = if conv_ok && misses == 0 {
        Status::Ok
    } else {
        Status::Violation
    };
    let mut verdict = format!("{} entries", rows.len());
    if conv.is_some() {
        verdict += &format!("; convolution max abs error {worst_conv:.3e}");
    }
    if sampler.is_some() {
        verdict += &format!("; {misses} Monte Carlo estimates outside 4 SE");
    }
    Ok(Outcome {
        status,
        verdict,
        results: json!({
            "rows": rows,
            "convolution_max_abs_error": conv.as_ref().map(|_| worst_conv),
            "mc_outside_4se": sampler.as_ref().map(|_| misses),
            "row_seed_rule": "seed + row index",
        }),
        tables: vec![("kernel_table.csv".into(), table)],
    })
}

pub fn ap_scan(sys: &BuiltSystem, p: &ApScanParams) -> RunResult<Outcome> {
    let lo = scalar(&p.tau_min, "experiment.tau_min")?;
    let hi = scalar(&p.tau_max, "experiment.tau_max")?;
    let window = scalar(&p.window, "experiment.window")?;
    let report = match p.target {
        ScanTarget::Coefficients => {
            let evo = &sys.evolution;
            let f = SampledFunction::uniform(
                window,
                p.grid_step,
                |t| Ok((evo.drift_checked(t)?, evo.noise_checked(t)?)),
                |a: &(DMatrix<f64>, DMatrix<f64>), b: &(DMatrix<f64>, DMatrix<f64>)| {
                    frobenius(&(&a.0 - &b.0)).hypot(frobenius(&(&a.1 - &b.1)))
                },
            )?;
            scan_almost_periods(&f, p.epsilon, (lo, hi), p.tau_step)?
        }
        ScanTarget::MeanSquare => {
            let spec = sys.spec()?;
            let f = SampledFunction::uniform(window, p.grid_step, Ok, |a: &f64, b: &f64| {
                l2_increment(&spec, a.min(*b), (b - a).abs())
                    .map(|v| v.max(0.0).sqrt())
                    .unwrap_or(f64::INFINITY)
            })?;
            scan_almost_periods(&f, p.epsilon, (lo, hi), p.tau_step)?
        }
    };
    let target = match p.target {
        ScanTarget::Coefficients => "coefficients",
        ScanTarget::MeanSquare => "mean_square",
    };
    let verdict = if report.taus_found.is_empty() {
        format!(
            "no {target} epsilon-almost period in [{lo}, {hi}] at epsilon = {:e}",
            p.epsilon
        )
    } else {
        format!(
            "{} {target} epsilon-almost periods in [{lo}, {hi}], smallest {}, inclusion length {}, relatively dense: {}",
            report.taus_found.len(),
            report.taus_found[0],
            report.inclusion_length,
            report.relatively_dense
        )
    };
    Ok(Outcome {
        status: Status::Ok,
        verdict,
        results: json!({"target": target, "report": to_json(&report)}),
        tables: vec![("ap_scan_curve.csv".into(), report.curve_table())],
    })
}

fn falsify_grid(p: &MsFalsifyParams) -> RunResult<FalsifyGrid<f64>> {
    let mut grid = FalsifyGrid::new(
        (
            scalar(&p.tau_min, "experiment.tau_min")?,
            scalar(&p.tau_max, "experiment.tau_max")?,
        ),
        p.tau_step,
        (
            scalar(&p.t_start, "experiment.t_start")?,
            scalar(&p.t_end, "experiment.t_end")?,
        ),
        p.t_step,
    );
    grid.tol = p.tol;
    Ok(grid)
}

/// `inf E‖X_{t+τ} - X_t‖²` over the grid; exit 2 when it does not clear `tol`.
pub fn ms_falsify(sys: &BuiltSystem, p: &MsFalsifyParams) -> RunResult<Outcome> {
    let grid = falsify_grid(p)?;
    let spec = sys.spec()?;
    let closed_form = match &sys.kind {
        SystemKind::Ou(o) => Some(2.0 * o.variance() * (1.0 - (-o.alpha() * grid.tau_min).exp())),
        _ => None,
    };
    let (status, verdict, result, t_ref) = match ms_ap_falsify(&spec, &grid) {
        Ok(r) => {
            let t_ref = r.argmin_t;
            (Status::Ok, r.verdict.clone(), to_json(&r), t_ref)
        }
        Err(Error::Inconclusive { c, tol }) => (
            Status::Inconclusive,
            format!("inconclusive: infimum {c:e} of the L2 increment is not above {tol:e}"),
            json!({"c": c, "tol": tol, "grid": to_json(&grid)}),
            grid.t_start,
        ),
        Err(e) => return Err(e.into()),
    };

    let mut decay = CsvTable::new(&["tau", "covariance", "l2_increment"]).comment(format!("t={t_ref:?}"));
    let n = ((grid.tau_max - grid.tau_min) / grid.tau_step - 1e-9).ceil().max(0.0) as usize;
    for j in 0..=n {
        let tau = (grid.tau_min + grid.tau_step * j as f64).min(grid.tau_max);
        decay.push(vec![
            tau,
            spec.kernel(t_ref, t_ref + tau).trace(),
            l2_increment(&spec, t_ref, tau)?,
        ]);
    }
    let mut results = json!({"falsification": result, "closed_form_c": closed_form});
    if let (Some(cf), Some(c)) = (closed_form, results["falsification"]["c"].as_f64()) {
        results["closed_form_abs_err"] = json!((c - cf).abs());
    }
    Ok(Outcome {
        status,
        verdict,
        results,
        tables: vec![("covariance_decay.csv".into(), decay)],
    })
}

fn probe(sys: &BuiltSystem, p: &LemmaParams) -> RunResult<ProbeSequence<f64>> {
    let d = sys.evolution.dim_state();
    let functional = p.functional.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        v
    });
    let times = match &p.times {
        Some(ts) => values(ts, "experiment.times")?,
        None => {
            let h = scalar(&p.spacing, "experiment.spacing")?;
            (1..=p.count).map(|n| n as f64 * h).collect()
        }
    };
    Ok(ProbeSequence::new(times, functional)?)
}

/// Exit 0 when both hypotheses hold, 3 when one fails, 2 when undecided.
pub fn lemma(sys: &BuiltSystem, p: &LemmaParams, seed: u64) -> RunResult<Outcome> {
    let probe = probe(sys, p)?;
    let sampler = sys.exact_sampler()?;
    let opts = LemmaOptions {
        gap: p.gap,
        cov_tol: p.cov_tol,
        var_margin: p.var_margin,
    };
    let rep = lemma_check(&sampler, &probe, p.n_mc, seed, &opts)?;
    let (status, verdict) = match rep.verdict {
        LemmaVerdict::HypothesesSatisfied => (Status::Ok, "hypotheses satisfied: not mean-square almost periodic"),
        LemmaVerdict::HypothesesFail => (Status::Violation, "hypotheses fail: no conclusion"),
        LemmaVerdict::Undecided => (
            Status::Inconclusive,
            "undecided: a confidence band straddles a threshold",
        ),
    };

    let mut var = CsvTable::new(&[
        "t",
        "probe_variance",
        "norm_variance",
        "norm_variance_se",
        "norm_variance_exact",
    ]);
    for (m, &t) in probe.times.iter().enumerate() {
        let exact = rep.norm_variance_exact.as_ref().map_or(f64::NAN, |v| v[m]);
        var.push(vec![
            t,
            rep.probe_variance[m],
            rep.norm_variance[m],
            rep.norm_variance_se[m],
            exact,
        ]);
    }
    let mut decay = CsvTable::new(&["lag_index", "covariance", "covariance_se"]);
    for (j, (c, se)) in rep.cov[0].iter().zip(&rep.cov_se[0]).enumerate() {
        decay.push(vec![j as f64, *c, *se]);
    }
    let var = metadata(var, seed, p.n_mc, &sampler.describe());
    Ok(Outcome {
        status,
        verdict: verdict.into(),
        results: to_json(&rep),
        tables: vec![
            ("lemma_norm_variance.csv".into(), var),
            ("lemma_covariance_decay.csv".into(), decay),
        ],
    })
}

/// `n` points evenly spaced on `[a, b)`.
fn half_open(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| a + (b - a) * j as f64 / n as f64).collect()
}

/// Exit 0 when some candidate is an ε-almost period in distribution, else 2.
pub fn dist_ap(sys: &BuiltSystem, p: &DistApParams) -> RunResult<Outcome> {
    let offsets = values(&p.offsets, "experiment.offsets")?;
    let taus = values(&p.tau_candidates, "experiment.tau_candidates")?;
    let (a, b) = (
        scalar(&p.t_start, "experiment.t_start")?,
        scalar(&p.t_end, "experiment.t_end")?,
    );
    if p.t_points == 0 || !(a < b) {
        return Err(ConfigError::invalid("dist-ap-check needs t_start < t_end and t_points >= 1").into());
    }
    let spec = sys.spec()?;
    let rep = distribution_ap_check(&spec, &offsets, &taus, p.epsilon, &half_open(a, b, p.t_points))?;
    let (status, verdict) = if rep.taus_found.is_empty() {
        (
            Status::Inconclusive,
            format!("no candidate is a {:e}-almost period in distribution", p.epsilon),
        )
    } else {
        let w = &rep.witnesses[0];
        (
            Status::Ok,
            format!(
                "almost period in distribution: tau = {} with W2 distance {:e} over {} offsets",
                w.tau,
                w.distance,
                offsets.len()
            ),
        )
    };
    Ok(Outcome {
        status,
        verdict,
        results: json!({"offsets": offsets, "report": to_json(&rep)}),
        tables: vec![("dist_ap_curve.csv".into(), rep.curve_table())],
    })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect()
}

/// Dissipativity, exponential stability and the variance condition; exit 3
/// when any fails.
pub fn hypotheses(sys: &BuiltSystem, p: &HypothesisParams) -> RunResult<Outcome> {
    let t0 = scalar(&p.t_start, "experiment.t_start")?;
    let t1 = match &p.t_end {
        Some(s) => scalar(s, "experiment.t_end")?,
        None => t0 + sys.period().unwrap_or(10.0),
    };
    let grid = linspace(t0, t1, p.t_points.max(2));
    let beta = check_dissipativity(&sys.evolution, &grid)?;
    let dissipative = beta > p.beta_tol;

    let mut tables = Vec::new();
    let (stability, variance) = match check_exponential_stability(&sys.evolution, p.horizon, p.step) {
        Ok(est) => {
            let mut env = CsvTable::new(&["lag", "envelope", "bound"]);
            for (k, &e) in est.envelope.iter().enumerate() {
                let lag = est.grid.lag_step * k as f64;
                env.push(vec![lag, e, est.bound(lag)]);
            }
            tables.push(("stability_envelope.csv".to_string(), env));
            let stable = est.is_exponentially_stable();
            let stability = json!({
                "holds": stable,
                "m": est.m,
                "delta": est.delta,
                "max_violation": est.max_violation(),
                "grid": to_json(&est.grid),
            });
            let variance = if stable {
                let conv = StochasticConvolution::with_certificate(
                    sys.evolution.clone(),
                    est,
                    sys.numerics.step,
                    sys.numerics.tail_tol,
                )?;
                let times = values(&p.variance_times, "experiment.variance_times")?;
                let mut vals = Vec::new();
                for &t in &times {
                    vals.push(json!({"t": t, "value": conv.variance_condition(t)?}));
                }
                let holds = vals.iter().all(|v| {
                    let x = v["value"].as_f64().unwrap_or(f64::NAN);
                    x > 0.0 && x.is_finite()
                });
                json!({"holds": holds, "values": vals})
            } else {
                json!({"holds": false, "values": [], "reason": "no exponential stability certificate"})
            };
            (stability, variance)
        }
        Err(e @ (Error::Unstable { .. } | Error::NotStable(_))) => (
            json!({"holds": false, "reason": e.to_string()}),
            json!({"holds": false, "values": [], "reason": "no exponential stability certificate"}),
        ),
        Err(e) => return Err(e.into()),
    };

    let mut failed = Vec::new();
    if !dissipative {
        failed.push(format!("dissipativity (beta = {beta:e})"));
    }
    if stability["holds"] != json!(true) {
        failed.push("exponential stability".to_string());
    }
    if variance["holds"] != json!(true) {
        failed.push("variance condition".to_string());
    }
    let (status, verdict) = if failed.is_empty() {
        (Status::Ok, "all hypotheses hold".to_string())
    } else {
        (Status::Violation, format!("violated: {}", failed.join(", ")))
    };
    Ok(Outcome {
        status,
        verdict,
        results: json!({
            "dissipativity": {"holds": dissipative, "beta": beta, "beta_tol": p.beta_tol, "t_grid": [t0, t1, grid.len()]},
            "exponential_stability": stability,
            "variance_condition": variance,
        }),
        tables,
    })
}

/// Second and fourth moments plus the uniform fourth-moment bound; exit 3
/// when the bound fails. Moment `j` at time `i` uses seed `seed + 2i + j`.
pub fn moments(sys: &BuiltSystem, p: &MomentsParams, seed: u64) -> RunResult<Outcome> {
    let times = values(&p.times, "experiment.times")?;
    let (a, b, h) = (
        scalar(&p.t_start, "experiment.t_start")?,
        scalar(&p.t_end, "experiment.t_end")?,
        scalar(&p.t_step, "experiment.t_step")?,
    );
    if !(h > 0.0 && a <= b) || times.is_empty() {
        return Err(ConfigError::invalid("moments needs nonempty times, t_start <= t_end and t_step > 0").into());
    }
    let grid: Vec<f64> = (0..=((b - a) / h + 1e-9).floor() as usize)
        .map(|k| a + h * k as f64)
        .collect();
    let start = times.iter().copied().fold(a, f64::min);
    let sampler = sys.path_sampler(start, p.euler_step)?;

    let mut table = CsvTable::new(&["t", "p", "value", "std_error", "exact"]);
    let mut ests = Vec::new();
    let mut failure = None;
    'outer: for (i, &t) in times.iter().enumerate() {
        for (j, order) in [2u32, 4].into_iter().enumerate() {
            let s = seed.wrapping_add(2 * i as u64 + j as u64);
            match mc_moment(&sampler, t, order, p.n, s) {
                Ok(e) => {
                    table.push(vec![t, order as f64, e.value, e.std_error, e.exact.unwrap_or(f64::NAN)]);
                    ests.push(json!({"t": t, "p": order, "estimate": to_json(&e)}));
                }
                Err(e @ Error::Diverged { .. }) => {
                    failure = Some(e.to_string());
                    break 'outer;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let table = metadata(table, seed, p.n, &sampler.describe()).comment("row_seed=seed+row");
    let ui = ui_proxy(&sampler, &grid, p.ui_n, seed)?;
    let mut ui_table = CsvTable::new(&["t", "fourth_moment", "std_error"]);
    for (t, e) in ui.times.iter().zip(&ui.per_time) {
        ui_table.push(vec![*t, e.value, e.std_error]);
    }
    let ui_table = metadata(ui_table, seed, p.ui_n, &sampler.describe());
    let failure = failure.or_else(|| ui.failure.clone());
    let (status, verdict) = match &failure {
        None => (
            Status::Ok,
            format!("fourth moments uniformly bounded by {:.6}", ui.bound),
        ),
        Some(f) => (Status::Violation, format!("no uniform moment bound: {f}")),
    };
    Ok(Outcome {
        status,
        verdict,
        results: json!({"moments": ests, "uniform_integrability": to_json(&ui), "failure": failure}),
        tables: vec![("moments.csv".into(), table), ("ui_proxy.csv".into(), ui_table)],
    })
}
