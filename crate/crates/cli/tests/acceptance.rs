//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach stdout.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use apsde_cli::{paper_repro, ReproBundle};
use apsde_core::evolution::propagator;
use apsde_core::linalg::frobenius;
use apsde_core::sampler::PathRng;
use apsde_core::{CsvTable, EvolutionSystem64};
use serde_json::Value;

type Verdict = Result<String, String>;

fn table<'a>(b: &'a ReproBundle, name: &str) -> &'a CsvTable {
    &b.tables
        .iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .1
}

fn col(t: &CsvTable, name: &str) -> Vec<f64> {
    t.column(name).unwrap_or_else(|| panic!("missing column {name}"))
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn ensure(ok: bool, msg: String) -> Verdict {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn periodic_kernel(t1: f64, t2: f64) -> f64 {
    let (s, t) = (t1.min(t2), t1.max(t2));
    0.5 * (-(t - s) + t.sin() - s.sin()).exp()
}

fn ou_kernel(alpha: f64, sigma: f64, t1: f64, t2: f64) -> f64 {
    sigma * sigma * (-alpha * (t1 - t2).abs()).exp()
}

fn c1(b: &ReproBundle) -> Verdict {
    let mut worst = 0.0f64;
    let mut rows = 0;
    for (alpha, sigma, tag) in [(1.0, 1.0, "ou_a1_s1"), (0.5, 2.0, "ou_a0.5_s2")] {
        let t = table(b, &format!("{tag}_kernel_table.csv"));
        if !t.comments.iter().any(|c| c == "n=100000") {
            return Err(format!("{tag}: sample size is not 1e5"));
        }
        let (ts, taus, mc, se) = (col(t, "t"), col(t, "tau"), col(t, "mc"), col(t, "mc_se"));
        for i in 0..ts.len() {
            let truth = ou_kernel(alpha, sigma, ts[i], ts[i] + taus[i]);
            worst = worst.max((mc[i] - truth).abs() / se[i]);
            rows += 1;
        }
    }
    ensure(
        rows == 24 && worst <= 4.0,
        format!("OU kernel consistency, {rows} entries, max |mc - truth| / se = {worst:.2}"),
    )
}

fn c2(b: &ReproBundle) -> Verdict {
    let t = table(b, "periodic_variance.csv");
    let times = col(t, "t");
    let expected = [0.0, PI / 2.0, PI, 3.0];
    if times != expected {
        return Err(format!("variance times {times:?}"));
    }
    let worst = col(t, "quadrature")
        .into_iter()
        .chain(col(t, "mc"))
        .map(|v| (v - 0.5).abs())
        .fold(0.0, f64::max);
    let cov = &b.sections["periodic_variance"]["covariance_0_2pi"];
    let truth = 0.5 * (-TAU).exp();
    let q_err = (num(&cov["quadrature"]) - truth).abs();
    let mc_z = (num(&cov["monte_carlo"]["value"]) - truth).abs() / num(&cov["monte_carlo"]["std_error"]);
    ensure(
        worst <= 0.005 && q_err <= 1e-6 && mc_z <= 4.0,
        format!(
            "periodic variance max |v - 0.5| = {worst:.2e}; Cov(0, 2pi) quadrature err {q_err:.1e}, mc z = {mc_z:.2}"
        ),
    )
}

fn c3(b: &ReproBundle) -> Verdict {
    let mut msgs = Vec::new();
    let mut ok = true;
    for (alpha, sigma, tag) in [(1.0f64, 1.0f64, "ou_a1_s1"), (0.5, 2.0, "ou_a0.5_s2")] {
        let r = &b.sections["ou_ms_falsify"][tag];
        let c = num(&r["results"]["falsification"]["c"]);
        let closed = 2.0 * sigma * sigma * (1.0 - (-alpha).exp());
        let verdict = r["verdict"].as_str().unwrap_or("");
        ok &= (c - closed).abs() <= 1e-9 && verdict.starts_with("not mean-square almost periodic on tested range");
        msgs.push(format!("c = {c:.5} (err {:.1e})", (c - closed).abs()));
    }
    ok &= (2.0 * (1.0 - (-1.0f64).exp()) - 1.26424).abs() < 5e-6;
    ensure(ok, format!("OU mean-square falsification, {}", msgs.join(", ")))
}

fn c4(b: &ReproBundle) -> Verdict {
    let sep = &b.sections["separation"];
    let dist = &sep["periodic_distribution"]["results"];
    let offsets: Vec<f64> = dist["offsets"].as_array().into_iter().flatten().map(num).collect();
    let w2 = dist["report"]["witnesses"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|w| num(&w["tau"]) == TAU)
        .map_or(f64::INFINITY, |w| num(&w["distance"]));
    let c = num(&sep["periodic_mean_square"]["results"]["falsification"]["c"]);
    ensure(
        offsets == [0.0, 1.0, 2.0, 3.0, 4.0] && w2 <= 1e-10 && c >= 0.5,
        format!("separation in one run: W2 at 2pi = {w2:.1e}, mean-square c on [pi, 100] = {c:.4}"),
    )
}

fn c5(b: &ReproBundle, elapsed: Duration) -> Verdict {
    let r = &b.sections["lemma"]["ou"]["results"];
    let mut cov_err = 0.0f64;
    let cov = r["cov"].as_array().cloned().unwrap_or_default();
    for (n, row) in cov.iter().enumerate() {
        for (m, c) in row.as_array().into_iter().flatten().enumerate() {
            cov_err = cov_err.max((num(c) - ou_kernel(1.0, 1.0, (n + 1) as f64, (m + 1) as f64)).abs());
        }
    }
    let exact = 1.0 - 2.0 / PI;
    let vars: Vec<f64> = r["norm_variance"].as_array().into_iter().flatten().map(num).collect();
    let ses: Vec<f64> = r["norm_variance_se"]
        .as_array()
        .into_iter()
        .flatten()
        .map(num)
        .collect();
    let worst_z = vars
        .iter()
        .zip(&ses)
        .map(|(v, s)| (v - exact).abs() / s)
        .fold(0.0, f64::max);
    let max_offdiag = num(&r["max_offdiag"]);
    let ok = cov.len() == 30
        && cov_err <= 1e-12
        && max_offdiag < 1e-4
        && vars.len() == 30
        && worst_z <= 4.0
        && r["n_mc"] == 1_000_000
        && r["verdict"] == "HypothesesSatisfied"
        && elapsed <= Duration::from_secs(60);
    ensure(
        ok,
        format!(
            "OU lemma check: max off-diagonal {max_offdiag:.1e}, norm variance max z = {worst_z:.2}, verdict {}",
            r["verdict"]
        ),
    )
}

fn c6(b: &ReproBundle) -> Verdict {
    let t = table(b, "propagator_accuracy.csv");
    let (s, tt, u) = (col(t, "s"), col(t, "t"), col(t, "numeric"));
    let worst = (0..s.len())
        .map(|i| (u[i] - (-(tt[i] - s[i]) + tt[i].sin() - s[i].sin()).exp()).abs())
        .fold(0.0, f64::max);
    let in_range = s.iter().chain(&tt).all(|x| (-10.0..=10.0).contains(x));
    let sys = EvolutionSystem64::periodic_example();
    let mut rng = PathRng::new(20_261_016, 0);
    let mut defect = 0.0f64;
    for _ in 0..20 {
        let s0 = rng.uniform(-10.0, 10.0);
        let r = s0 + rng.uniform(0.0, 5.0);
        let t1 = r + rng.uniform(0.0, 5.0);
        let u = |a: f64, b: f64| propagator(&sys, a, b, 1e-3).expect("propagator").u;
        defect = defect.max(frobenius(&(u(r, t1) * u(s0, r) - u(s0, t1))));
    }
    ensure(
        s.len() == 20 && in_range && worst <= 1e-8 && defect <= 1e-7,
        format!(
            "propagator max error {worst:.1e} over {} pairs, cocycle defect {defect:.1e}",
            s.len()
        ),
    )
}

fn c7(b: &ReproBundle) -> Verdict {
    let r = &b.sections["hypotheses"]["periodic_example"]["results"];
    let delta = num(&r["exponential_stability"]["delta"]);
    let m = num(&r["exponential_stability"]["m"]);
    let beta = num(&r["dissipativity"]["beta"]);
    let vars: Vec<f64> = r["variance_condition"]["values"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|v| num(&v["value"]))
        .collect();
    let var_err = vars.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    ensure(
        (delta - 1.0).abs() <= 0.01
            && (1.99..=2.01).contains(&m.ln())
            && beta.abs() <= 1e-9
            && r["dissipativity"]["holds"] == false
            && vars.len() == 5
            && var_err <= 1e-6,
        format!(
            "hypotheses audit: delta = {delta:.4}, ln M = {:.4}, beta = {beta:.1e} (dissipativity fails), variance max err {var_err:.1e}",
            m.ln()
        ),
    )
}

fn c8(b: &ReproBundle) -> Verdict {
    let t = table(b, "convolution_check.csv");
    let (sys, t1, t2, conv) = (col(t, "system"), col(t, "t1"), col(t, "t2"), col(t, "convolution"));
    let mut worst = [0.0f64; 2];
    for i in 0..sys.len() {
        let truth = if sys[i] == 0.0 {
            periodic_kernel(t1[i], t2[i])
        } else {
            ou_kernel(0.5, 2.0, t1[i], t2[i])
        };
        let k = sys[i] as usize;
        worst[k] = worst[k].max((conv[i] - truth).abs());
    }
    let counts = [0.0, 1.0].map(|k| sys.iter().filter(|&&s| s == k).count());
    ensure(
        counts == [10, 10] && worst.iter().all(|w| *w <= 1e-6),
        format!(
            "convolution covariance vs kernels: periodic {:.1e}, OU {:.1e}",
            worst[0], worst[1]
        ),
    )
}

fn c9(b: &ReproBundle) -> Verdict {
    let t = table(b, "ci_calibration.csv");
    let (est, se) = (col(t, "estimate"), col(t, "std_error"));
    let covered = est
        .iter()
        .zip(&se)
        .filter(|(e, s)| (**e - 0.5).abs() <= 4.0 * **s)
        .count();
    ensure(
        est.len() == 200 && covered >= 195,
        format!("4 SE coverage {covered}/{}", est.len()),
    )
}

fn c10() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_apsde"))
            .args(["repro", "--seed", "42", "--out"])
            .arg(d.path())
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if status.code() != Some(0) {
            return Err(format!("repro exited with {status}"));
        }
    }
    let listing = |p: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        names
    };
    let (a, b) = (listing(dirs[0].path()), listing(dirs[1].path()));
    if a != b {
        return Err("bundles list different files".into());
    }
    let mut bytes = 0;
    for name in &a {
        let x = std::fs::read(dirs[0].path().join(name)).unwrap();
        let y = std::fs::read(dirs[1].path().join(name)).unwrap();
        if x != y {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        bytes += x.len();
    }
    Ok(format!(
        "repro --seed 42 twice: {} files, {bytes} bytes, byte-identical",
        a.len()
    ))
}

fn main() {
    let start = Instant::now();
    let bundle = paper_repro(42).expect("repro runs");
    let elapsed = start.elapsed();
    let results = [
        c1(&bundle),
        c2(&bundle),
        c3(&bundle),
        c4(&bundle),
        c5(&bundle, elapsed),
        c6(&bundle),
        c7(&bundle),
        c8(&bundle),
        c9(&bundle),
        c10(),
    ];
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(msg) => println!("[PASS] criterion {}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {}: {msg}", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
