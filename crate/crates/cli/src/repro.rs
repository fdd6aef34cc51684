//! The full counterexample suite as one deterministic bundle.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::{Path, PathBuf};

use apsde_core::estimators::{mc_cov, mc_moment, ProcessSampler};
use apsde_core::evolution::propagator;
use apsde_core::gp_core::{ou_spec, periodic_example_propagator, periodic_example_spec};
use apsde_core::linalg::frobenius;
use apsde_core::sampler::{sample_ou_exact, sample_periodic_exact, Grid, PathRng, GENERATOR_ID};
use apsde_core::{CsvTable, EvolutionSystem64, OuParams64, StochasticConvolution};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{
    ApScanParams, CustomSystem, DistApParams, Entry, Format, HypothesisParams, KernelTableParams, LemmaParams,
    MomentsParams, MsFalsifyParams, Numerics, Scalar, SystemConfig,
};
use crate::experiments::{self, Outcome, RunResult, Status, CONVOLUTION_TOL};
use crate::output::OutputSink;
use crate::systems::{build, BuiltSystem};

pub const DEFAULT_SEED: u64 = 42;

/// Verdict strings of the mean-square falsification start with this.
pub const MS_VERDICT: &str = "not mean-square almost periodic on tested range";

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ReproBundle {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub sections: Value,
    pub tables: Vec<(String, CsvTable)>,
}

impl ReproBundle {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: u32) -> &Check {
        self.checks
            .iter()
            .find(|c| c.id == id)
            .expect("every check id is present")
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            Status::Violation.exit_code()
        }
    }

    pub fn report(&self) -> Value {
        json!({
            "tool": "apsde",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "repro",
            "seed": self.seed,
            "seed_rule": "sub-seeds are the first 8 bytes (little endian) of sha256(\"<seed>/<label>\")",
            "generator": GENERATOR_ID,
            "all_passed": self.all_passed(),
            "exit_code": self.exit_code(),
            "checks": self.checks,
            "sections": self.sections,
        })
    }

    /// Every table as CSV, then `report.json`.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let mut sink = OutputSink::new(dir, &[Format::Csv, Format::Json])?;
        for (name, table) in &self.tables {
            sink.csv(name, table)?;
        }
        sink.finish(self.report())
    }
}

/// Deterministic per-experiment seed.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn system(cfg: SystemConfig) -> BuiltSystem {
    build(&cfg, &Numerics::default()).expect("builtin systems are valid")
}

fn nums(xs: &[f64]) -> Vec<Scalar> {
    xs.iter().map(|&v| Scalar::Num(v)).collect()
}

struct Suite {
    seed: u64,
    checks: Vec<Check>,
    sections: serde_json::Map<String, Value>,
    tables: Vec<(String, CsvTable)>,
}

impl Suite {
    fn check(&mut self, id: u32, name: &str, passed: bool, detail: Value) {
        self.checks.push(Check {
            id,
            name: name.into(),
            passed,
            detail,
        });
    }

    fn section(&mut self, key: &str, v: Value) {
        self.sections.insert(key.into(), v);
    }

    /// Keeps the outcome's tables under `prefix_`.
    fn keep(&mut self, prefix: &str, o: &Outcome) -> Value {
        for (name, t) in &o.tables {
            self.tables.push((format!("{prefix}_{name}"), t.clone()));
        }
        json!({"status": o.status, "verdict": o.verdict, "results": o.results})
    }
}

/// Runs every experiment of the suite and checks criteria 1-9; determinism
/// (same seed, same bytes) is a property of the written bundle.
pub fn paper_repro(seed: u64) -> RunResult<ReproBundle> {
    let mut s = Suite {
        seed,
        checks: Vec::new(),
        sections: serde_json::Map::new(),
        tables: Vec::new(),
    };
    ou_kernels(&mut s)?;
    periodic_variance(&mut s)?;
    ou_falsification(&mut s)?;
    separation(&mut s)?;
    lemma(&mut s)?;
    propagators(&mut s)?;
    hypotheses(&mut s)?;
    convolution(&mut s)?;
    calibration(&mut s)?;
    extras(&mut s)?;
    s.checks.sort_by_key(|c| c.id);
    Ok(ReproBundle {
        seed,
        checks: s.checks,
        sections: Value::Object(s.sections),
        tables: s.tables,
    })
}

fn ou_kernels(s: &mut Suite) -> RunResult<()> {
    let params = KernelTableParams {
        times: nums(&[0.0, 1.0, 5.0]),
        lags: nums(&[0.0, LN_2, 1.0, 5.0]),
        n_mc: 100_000,
        convolution: false,
    };
    let mut out = serde_json::Map::new();
    let mut passed = true;
    let mut misses = Vec::new();
    for (a, sg, tag) in [(1.0, 1.0, "ou_a1_s1"), (0.5, 2.0, "ou_a0.5_s2")] {
        let sys = system(SystemConfig::ou(a, sg));
        let o = experiments::kernel_table(&sys, &params, sub_seed(s.seed, tag))?;
        let m = o.results["mc_outside_4se"].as_u64().unwrap_or(u64::MAX);
        passed &= m == 0 && o.status == Status::Ok;
        misses.push(json!({"alpha": a, "sigma": sg, "outside_4se": m, "entries": 12}));
        out.insert(tag.into(), s.keep(tag, &o));
    }
    s.section("ou_kernel", Value::Object(out));
    s.check(
        1,
        "OU Monte Carlo covariance within 4 SE of sigma^2 exp(-alpha tau)",
        passed,
        json!(misses),
    );
    Ok(())
}

fn periodic_variance(s: &mut Suite) -> RunResult<()> {
    let conv = StochasticConvolution::new(EvolutionSystem64::periodic_example(), 0.01, 1e-12)?;
    let sampler = ProcessSampler::<f64>::PeriodicExact;
    let n = 1_000_000;
    let mut table = CsvTable::new(&["t", "quadrature", "mc", "mc_se"])
        .comment(format!("n={n}"))
        .comment(format!("generator={GENERATOR_ID}"))
        .comment(format!("sampler={}", sampler.describe()));
    let mut rows = Vec::new();
    let mut passed = true;
    for (i, t) in [0.0, PI / 2.0, PI, 3.0].into_iter().enumerate() {
        let q = conv.sigma(t)?[(0, 0)];
        let seed = sub_seed(s.seed, &format!("periodic_variance/{i}"));
        let mc = mc_moment(&sampler, t, 2, n, seed)?;
        passed &= (q - 0.5).abs() <= 0.005 && (mc.value - 0.5).abs() <= 0.005;
        table = table.comment(format!("seed_row{i}={seed}"));
        table.push(vec![t, q, mc.value, mc.std_error]);
        rows.push(json!({"t": t, "quadrature": q, "monte_carlo": mc}));
    }
    let truth = 0.5 * (-TAU).exp();
    let q = conv.covariance(0.0, TAU)?[(0, 0)];
    let mc = mc_cov(&sampler, 0.0, TAU, n, sub_seed(s.seed, "periodic_cov"))?;
    let cov_ok = mc.covers(truth, 4.0) && (q - truth).abs() <= 1e-6;
    passed &= cov_ok;
    let detail = json!({
        "variance": rows,
        "covariance_0_2pi": {"exact": truth, "quadrature": q, "quadrature_abs_err": (q - truth).abs(), "monte_carlo": mc},
    });
    s.tables.push(("periodic_variance.csv".into(), table));
    s.section("periodic_variance", detail.clone());
    s.check(
        2,
        "periodic example: variance 0.500 +- 0.005 and Cov(X_0, X_2pi) = 0.5 exp(-2pi)",
        passed,
        detail,
    );
    Ok(())
}

fn falsify_params(tau: (f64, f64), t: (f64, f64)) -> MsFalsifyParams {
    MsFalsifyParams {
        tau_min: tau.0.into(),
        tau_max: tau.1.into(),
        tau_step: 0.05,
        t_start: t.0.into(),
        t_end: t.1.into(),
        t_step: 0.05,
        tol: 1e-12,
    }
}

fn ou_falsification(s: &mut Suite) -> RunResult<()> {
    let mut detail = Vec::new();
    let mut passed = true;
    let mut out = serde_json::Map::new();
    for (a, sg, tag) in [(1.0, 1.0, "ou_a1_s1"), (0.5, 2.0, "ou_a0.5_s2")] {
        let o = experiments::ms_falsify(
            &system(SystemConfig::ou(a, sg)),
            &falsify_params((1.0, 50.0), (0.0, 20.0)),
        )?;
        let c = o.results["falsification"]["c"].as_f64().unwrap_or(f64::NAN);
        let closed = 2.0 * sg * sg * (1.0 - (-a).exp());
        passed &= o.status == Status::Ok && (c - closed).abs() <= 1e-9 && o.verdict.starts_with(MS_VERDICT);
        detail.push(json!({"alpha": a, "sigma": sg, "c": c, "closed_form": closed, "abs_err": (c - closed).abs(), "verdict": o.verdict}));
        out.insert(tag.into(), s.keep(&format!("{tag}_ms"), &o));
    }
    s.section("ou_ms_falsify", Value::Object(out));
    s.check(
        3,
        "OU mean-square falsification: c = 2 sigma^2 (1 - exp(-alpha)) within 1e-9",
        passed,
        json!(detail),
    );
    Ok(())
}

fn separation(s: &mut Suite) -> RunResult<()> {
    let periodic = system(SystemConfig::periodic_example());
    let dist = experiments::dist_ap(
        &periodic,
        &DistApParams {
            offsets: nums(&[0.0, 1.0, 2.0, 3.0, 4.0]),
            tau_candidates: nums(&[1.0, PI, TAU, 10.0]),
            epsilon: 1e-10,
            t_start: 0.0.into(),
            t_end: TAU.into(),
            t_points: 64,
        },
    )?;
    let found = &dist.results["report"]["taus_found"];
    let witness = dist.results["report"]["witnesses"]
        .as_array()
        .and_then(|ws| ws.iter().find(|w| w["tau"].as_f64() == Some(TAU)))
        .cloned();
    let w2 = witness
        .as_ref()
        .and_then(|w| w["distance"].as_f64())
        .unwrap_or(f64::INFINITY);
    let ms = experiments::ms_falsify(&periodic, &falsify_params((PI, 100.0), (0.0, TAU)))?;
    let c = ms.results["falsification"]["c"].as_f64().unwrap_or(f64::NAN);
    let passed = w2 <= 1e-10 && c >= 0.5 && ms.status == Status::Ok;
    let detail = json!({
        "distribution": {"taus_found": found, "w2_at_2pi": w2, "offsets": [0, 1, 2, 3, 4]},
        "mean_square": {"c": c, "tau_range": [PI, 100.0], "verdict": ms.verdict},
    });

    let ou = system(SystemConfig::ou(1.0, 1.0));
    let ou_dist = experiments::dist_ap(
        &ou,
        &DistApParams {
            offsets: nums(&[0.0, 1.5]),
            tau_candidates: nums(&[0.7, 3.0, 42.0]),
            epsilon: 1e-10,
            t_start: 0.0.into(),
            t_end: 20.0.into(),
            t_points: 20,
        },
    )?;
    let mut out = serde_json::Map::new();
    out.insert("periodic_distribution".into(), s.keep("periodic_dist", &dist));
    out.insert("periodic_mean_square".into(), s.keep("periodic_ms", &ms));
    out.insert("ou_distribution".into(), s.keep("ou_dist", &ou_dist));
    out.insert(
        "summary".into(),
        json!({
            "periodic_example": {"periodic_in_distribution": w2 <= 1e-10, "mean_square_falsified": c >= 0.5},
            "ou": {
                "stationary_in_distribution": ou_dist.status == Status::Ok,
                "mean_square_falsified": s.sections["ou_ms_falsify"]["ou_a1_s1"]["status"] == json!("ok"),
            },
        }),
    );
    s.section("separation", Value::Object(out));
    s.check(
        4,
        "periodic example: almost periodic in distribution at 2pi, mean-square falsified on [pi, 100]",
        passed,
        detail,
    );
    Ok(())
}

fn lemma(s: &mut Suite) -> RunResult<()> {
    let params = LemmaParams {
        n_mc: 1_000_000,
        ..LemmaParams::default()
    };
    let o = experiments::lemma(
        &system(SystemConfig::ou(1.0, 1.0)),
        &params,
        sub_seed(s.seed, "lemma_ou"),
    )?;
    let r = &o.results;
    let f = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    let exact = 1.0 - 2.0 / PI;
    let mut cov_err = 0.0f64;
    for (n, row) in r["cov"].as_array().into_iter().flatten().enumerate() {
        for (m, c) in row.as_array().into_iter().flatten().enumerate() {
            cov_err = cov_err.max((f(c) - (-(n as f64 - m as f64).abs()).exp()).abs());
        }
    }
    let var_ok = r["norm_variance"]
        .as_array()
        .zip(r["norm_variance_se"].as_array())
        .is_some_and(|(v, se)| v.len() == 30 && v.iter().zip(se).all(|(v, se)| (f(v) - exact).abs() <= 4.0 * f(se)));
    let max_offdiag = f(&r["max_offdiag"]);
    let passed = o.status == Status::Ok && max_offdiag < 1e-4 && cov_err <= 1e-12 && var_ok;
    let detail = json!({
        "verdict": r["verdict"],
        "max_offdiag": max_offdiag,
        "cov_max_abs_err": cov_err,
        "norm_variance_exact": exact,
        "norm_variance_within_4se": var_ok,
        "n_mc": params.n_mc,
    });

    let periodic = experiments::lemma(
        &system(SystemConfig::periodic_example()),
        &LemmaParams {
            spacing: TAU.into(),
            count: 12,
            ..LemmaParams::default()
        },
        sub_seed(s.seed, "lemma_periodic"),
    )?;
    let mut out = serde_json::Map::new();
    out.insert("ou".into(), s.keep("lemma_ou", &o));
    out.insert("periodic_example".into(), s.keep("lemma_periodic", &periodic));
    s.section("lemma", Value::Object(out));
    s.check(
        5,
        "OU decorrelation criterion with t_n = n: hypotheses satisfied",
        passed,
        detail,
    );
    Ok(())
}

fn propagators(s: &mut Suite) -> RunResult<()> {
    let sys = EvolutionSystem64::periodic_example();
    let mut rng = PathRng::new(sub_seed(s.seed, "propagator"), 0);
    let mut table = CsvTable::new(&["s", "t", "numeric", "exact", "abs_err"]);
    let mut max_err = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
        let (lo, hi) = (a.min(b), a.max(b));
        let u = propagator(&sys, lo, hi, 1e-3)?.u[(0, 0)];
        let exact = periodic_example_propagator(lo, hi);
        max_err = max_err.max((u - exact).abs());
        table.push(vec![lo, hi, u, exact, (u - exact).abs()]);
    }
    let mut max_defect = 0.0f64;
    for _ in 0..20 {
        let s0 = rng.uniform(-10.0, 10.0);
        let r = s0 + rng.uniform(0.0, 5.0);
        let t = r + rng.uniform(0.0, 5.0);
        let full = propagator(&sys, s0, t, 1e-3)?.u;
        let split = propagator(&sys, r, t, 1e-3)?.u * propagator(&sys, s0, r, 1e-3)?.u;
        max_defect = max_defect.max(frobenius(&(split - full)));
    }
    let detail = json!({"max_abs_err": max_err, "max_cocycle_defect": max_defect, "pairs": 20, "step": 1e-3});
    s.tables.push(("propagator_accuracy.csv".into(), table));
    s.section("propagator", detail.clone());
    s.check(
        6,
        "propagator within 1e-8 of closed form, cocycle defect <= 1e-7",
        max_err <= 1e-8 && max_defect <= 1e-7,
        detail,
    );
    Ok(())
}

fn hypotheses(s: &mut Suite) -> RunResult<()> {
    let o = experiments::hypotheses(&system(SystemConfig::periodic_example()), &HypothesisParams::default())?;
    let r = &o.results;
    let f = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    let (delta, m, beta) = (
        f(&r["exponential_stability"]["delta"]),
        f(&r["exponential_stability"]["m"]),
        f(&r["dissipativity"]["beta"]),
    );
    let vars: Vec<f64> = r["variance_condition"]["values"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|v| f(&v["value"]))
        .collect();
    let passed = (delta - 1.0).abs() <= 0.01
        && m >= 1.99f64.exp()
        && m <= 2.01f64.exp()
        && beta.abs() <= 1e-9
        && vars.len() == 5
        && vars.iter().all(|v| (v - 0.5).abs() <= 1e-6);
    let detail = json!({
        "delta": delta,
        "m": m,
        "ln_m": m.ln(),
        "beta": beta,
        "variance_condition": vars,
        "note": "beta = 0: the dissipativity hypothesis fails for this example while exponential stability holds",
    });
    let ou = experiments::hypotheses(&system(SystemConfig::ou(1.0, 1.0)), &HypothesisParams::default())?;
    let mut out = serde_json::Map::new();
    out.insert("periodic_example".into(), s.keep("hypotheses_periodic", &o));
    out.insert("ou".into(), s.keep("hypotheses_ou", &ou));
    s.section("hypotheses", Value::Object(out));
    s.check(
        7,
        "periodic example: delta = 1 +- 0.01, M in [e^1.99, e^2.01], beta = 0, variance condition 0.5",
        passed,
        detail,
    );
    Ok(())
}

const CONVOLUTION_PAIRS: [(f64, f64); 10] = [
    (0.0, 0.0),
    (0.0, 1.0),
    (0.3, 2.2),
    (1.0, TAU),
    (-2.0, 3.0),
    (4.0, 4.5),
    (2.0, 9.0),
    (-5.0, -1.0),
    (PI, 2.0 * PI),
    (7.7, 8.0),
];

fn convolution(s: &mut Suite) -> RunResult<()> {
    let ou = OuParams64::new(0.5, 2.0)?;
    let systems = [
        (EvolutionSystem64::periodic_example(), periodic_example_spec::<f64>()),
        (EvolutionSystem64::ou(ou), ou_spec(ou)),
    ];
    let mut table = CsvTable::new(&["system", "t1", "t2", "convolution", "kernel", "abs_err"])
        .comment("system: 0 = periodic_example, 1 = ou(alpha=0.5, sigma=2)");
    let mut worst = [0.0f64; 2];
    for (k, (sys, spec)) in systems.iter().enumerate() {
        let conv = StochasticConvolution::new(sys.clone(), 0.01, 1e-12)?;
        for (t1, t2) in CONVOLUTION_PAIRS {
            let c = conv.covariance(t1, t2)?[(0, 0)];
            let e = spec.kernel(t1, t2)[(0, 0)];
            worst[k] = worst[k].max((c - e).abs());
            table.push(vec![k as f64, t1, t2, c, e, (c - e).abs()]);
        }
    }
    let detail = json!({
        "periodic_example": {"max_abs_err": worst[0]},
        "ou_a0.5_s2": {"max_abs_err": worst[1]},
        "pairs": CONVOLUTION_PAIRS.len(),
        "tolerance": CONVOLUTION_TOL,
    });
    s.tables.push(("convolution_check.csv".into(), table));
    s.section("convolution", detail.clone());
    s.check(
        8,
        "stochastic convolution reproduces both closed-form kernels within 1e-6",
        worst.iter().all(|w| *w <= CONVOLUTION_TOL),
        detail,
    );
    Ok(())
}

fn calibration(s: &mut Suite) -> RunResult<()> {
    let sampler = ProcessSampler::OuExact(OuParams64::new(1.0, 1.0)?);
    let base = sub_seed(s.seed, "calibration");
    let mut covered = 0;
    let mut table = CsvTable::new(&["index", "estimate", "std_error", "covered"])
        .comment("n=10000")
        .comment(format!("seed={base}"))
        .comment("row_seed=seed+index");
    for i in 0..200u64 {
        let seed = base.wrapping_add(i);
        let e = mc_cov(&sampler, 0.0, LN_2, 10_000, seed)?;
        let hit = e.covers(0.5, 4.0);
        covered += usize::from(hit);
        table.push(vec![i as f64, e.value, e.std_error, f64::from(u8::from(hit))]);
    }
    let detail = json!({"covered": covered, "seeds": 200, "n": 10_000, "first_seed": base, "truth": 0.5});
    s.tables.push(("ci_calibration.csv".into(), table));
    s.section("calibration", detail.clone());
    s.check(
        9,
        "OU 4 SE intervals cover the truth for at least 195 of 200 seeds",
        covered >= 195,
        detail,
    );
    Ok(())
}

/// Plot data and the remaining experiment kinds; no acceptance checks.
fn extras(s: &mut Suite) -> RunResult<()> {
    let grid = Grid::new(0.0, 0.01, 2000)?;
    let ou = OuParams64::new(1.0, 1.0)?;
    let seed = sub_seed(s.seed, "paths");
    s.tables
        .push(("ou_path.csv".into(), sample_ou_exact(&ou, grid, seed).to_table()));
    s.tables
        .push(("periodic_path.csv".into(), sample_periodic_exact(grid, seed).to_table()));

    let periodic = system(SystemConfig::periodic_example());
    let scan = experiments::ap_scan(
        &periodic,
        &ApScanParams {
            grid_step: 0.05,
            ..ApScanParams::default()
        },
    )?;
    let mut out = serde_json::Map::new();
    out.insert(
        "periodic_coefficient_scan".into(),
        s.keep("periodic_coefficients", &scan),
    );

    let moments = MomentsParams {
        n: 20_000,
        ui_n: 20_000,
        ..MomentsParams::default()
    };
    let m = experiments::moments(&periodic, &moments, sub_seed(s.seed, "moments_periodic"))?;
    out.insert("periodic_moments".into(), s.keep("moments_periodic", &m));
    let m = experiments::moments(
        &system(SystemConfig::ou(1.0, 1.0)),
        &moments,
        sub_seed(s.seed, "moments_ou"),
    )?;
    out.insert("ou_moments".into(), s.keep("moments_ou", &m));

    let unstable = system(SystemConfig::custom(CustomSystem {
        name: Some("unstable".into()),
        drift: vec![vec![Entry::Num(1.0)]],
        noise: vec![vec![Entry::Num(1.0)]],
        q: None,
        period: None,
    }));
    let m = experiments::moments(
        &unstable,
        &MomentsParams {
            times: nums(&[1.0]),
            n: 1000,
            t_end: 50.0.into(),
            ui_n: 1000,
            euler_step: 1e-2,
            ..MomentsParams::default()
        },
        sub_seed(s.seed, "moments_unstable"),
    )?;
    out.insert("unstable_moments".into(), s.keep("moments_unstable", &m));
    s.section("extras", Value::Object(out));
    Ok(())
}
