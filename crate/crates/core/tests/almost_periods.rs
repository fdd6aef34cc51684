use std::f64::consts::{PI, SQRT_2, TAU};

use apsde_core::ap_analysis::{
    distribution_ap_check, gaussian_w2, lemma_check, ms_ap_falsify, relatively_dense, scan_almost_periods, FalsifyGrid,
    LemmaOptions, LemmaVerdict, ProbeSequence, SampledFunction,
};
use apsde_core::estimators::{mc_cov, ProcessSampler};
use apsde_core::gp_core::{ou_spec, periodic_example_spec, GaussianProcessSpec, OuParams};
use apsde_core::sampler::PathRng;
use apsde_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn quasi(t: f64) -> f64 {
    t.sin() + (SQRT_2 * t).sin()
}

fn scalar_fn<'a>(window: f64, step: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'a) -> SampledFunction<'a, f64, f64> {
    SampledFunction::uniform(window, step, move |t| Ok(g(t)), |a: &f64, b: &f64| (a - b).abs()).unwrap()
}

#[test]
fn quasi_periodic_almost_periods_are_relatively_dense() {
    let h = 0.05;
    let f = scalar_fn(560.0, h, quasi);
    let rep = scan_almost_periods(&f, 0.1, (0.0, 500.0), 0.01).unwrap();
    assert!(!rep.taus_found.is_empty());
    let l = rep.inclusion_length;
    assert!(l <= 200.0, "inclusion length {l}");
    assert!(rep.relatively_dense);
    assert!(relatively_dense(&rep.taus_found, (0.0, 500.0), l));
    assert!(rep.taus_found.iter().any(|&t| t > 100.0));

    // Re-validate each τ on a grid twice as fine; between grid points the
    // difference moves by at most sup|f'|·h.
    let lip = 1.0 + SQRT_2;
    let t_max = rep.comparison.t_max;
    for &tau in &rep.taus_found {
        let n = (t_max / (h / 2.0)).round() as usize;
        let sup = (0..=n)
            .map(|k| {
                let t = k as f64 * h / 2.0;
                (quasi(t + tau) - quasi(t)).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 0.1 + lip * h, "tau {tau}: {sup}");
    }
}

#[test]
fn distribution_versus_mean_square_separation() {
    let spec = periodic_example_spec::<f64>();
    let t_grid: Vec<f64> = (0..64).map(|j| j as f64 * TAU / 64.0).collect();
    let rep = distribution_ap_check(&spec, &[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, PI, TAU, 10.0], 1e-10, &t_grid).unwrap();
    assert_eq!(rep.taus_found, vec![TAU]);
    assert!(rep.witnesses[0].distance <= 1e-10);

    let res = ms_ap_falsify(&spec, &FalsifyGrid::new((PI, 100.0), 0.05, (0.0, TAU), 0.05)).unwrap();
    assert!(res.c >= 0.5, "c = {}", res.c);
}

#[test]
fn ou_is_stationary_in_distribution_but_falsified_in_mean_square() {
    let spec = ou_spec(OuParams::new(1.0, 1.0).unwrap());
    let t_grid: Vec<f64> = (0..20).map(|j| j as f64).collect();
    let rep = distribution_ap_check(&spec, &[0.0, 1.5], &[0.7, 3.0, 42.0], 1e-10, &t_grid).unwrap();
    assert_eq!(rep.taus_found.len(), 3);
    let res = ms_ap_falsify(&spec, &FalsifyGrid::new((1.0, 50.0), 0.1, (0.0, 20.0), 0.1)).unwrap();
    assert!((res.c - 2.0 * (1.0 - (-1.0f64).exp())).abs() <= 1e-9);
    assert!((res.c - 1.26424).abs() < 1e-5);
}

#[test]
fn growing_process_has_no_distributional_almost_periods() {
    // Law of an unstable linear system started at time 0: variance e^{2t} - 1.
    let spec = GaussianProcessSpec::scalar("unstable", |s: f64, t: f64| {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        0.5 * ((hi - lo).exp()) * ((2.0 * lo).exp() - 1.0)
    });
    let t_grid: Vec<f64> = (1..20).map(|j| j as f64 * 0.5).collect();
    let rep = distribution_ap_check(&spec, &[0.0, 1.0], &[1.0, 2.0, TAU, 10.0], 0.1, &t_grid).unwrap();
    assert!(rep.taus_found.is_empty());
}

#[test]
fn falsification_bound_agrees_with_monte_carlo_increments() {
    // E|X_{t+τ} - X_t|² = K(t,t) + K(t+τ,t+τ) - 2K(t,t+τ), estimated by Monte Carlo.
    let s = ProcessSampler::OuExact(OuParams::new(1.0, 1.0).unwrap());
    let (t, tau) = (3.0, 1.0);
    let n = 200_000;
    let a = mc_cov(&s, t, t, n, 1).unwrap();
    let b = mc_cov(&s, t + tau, t + tau, n, 1).unwrap();
    let c = mc_cov(&s, t, t + tau, n, 1).unwrap();
    let inc = a.value + b.value - 2.0 * c.value;
    let se = 4.0 * (a.std_error + b.std_error + 2.0 * c.std_error);
    assert!((inc - 2.0 * (1.0 - (-1.0f64).exp())).abs() <= se);
}

#[test]
fn ou_falsification_from_zero_is_inconclusive() {
    let spec = ou_spec(OuParams::new(1.0, 1.0).unwrap());
    let err = ms_ap_falsify(&spec, &FalsifyGrid::new((0.0, 50.0), 0.1, (0.0, 20.0), 0.1)).unwrap_err();
    assert!(matches!(err, Error::Inconclusive { .. }));
}

#[test]
fn lemma_routes_agree_with_falsification() {
    let ou = ProcessSampler::OuExact(OuParams::new(1.0, 1.0).unwrap());
    let rep = lemma_check(
        &ou,
        &ProbeSequence::scalar_arithmetic(1.0, 30).unwrap(),
        100_000,
        5,
        &LemmaOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.verdict, LemmaVerdict::HypothesesSatisfied);
    assert!(rep.max_offdiag < 1e-4);
    for (n, row) in rep.cov.iter().enumerate() {
        for (m, c) in row.iter().enumerate() {
            assert!((c - (-(n as f64 - m as f64).abs()).exp()).abs() < 1e-15);
        }
    }

    let periodic = ProcessSampler::PeriodicExact;
    let rep = lemma_check(
        &periodic,
        &ProbeSequence::scalar_arithmetic(TAU, 12).unwrap(),
        100_000,
        6,
        &LemmaOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.verdict, LemmaVerdict::HypothesesSatisfied);
    assert!((rep.cov[0][1] - 0.5 * (-TAU).exp()).abs() < 1e-15);
    let exact = 0.5 * (1.0 - 2.0 / PI);
    for (v, se) in rep.norm_variance.iter().zip(&rep.norm_variance_se) {
        assert!((v - exact).abs() < 4.0 * se);
    }
}

#[test]
fn wasserstein_matches_empirical_coupling() {
    let n = 1_000_000;
    let draw = |seed: u64, m: f64, sd: f64| -> Vec<f64> {
        let mut rng = PathRng::new(seed, 0);
        let mut v: Vec<f64> = (0..n).map(|_| m + sd * rng.normal::<f64>()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let empirical =
        |x: &[f64], y: &[f64]| (x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let mean = |m: f64| DVector::from_element(1, m);

    let base = draw(1, 0.0, 1.0);
    let w = gaussian_w2(&mean(0.0), &one(1.0), &mean(1.0), &one(1.0)).unwrap();
    assert!((w - 1.0).abs() < 1e-15);
    assert!((empirical(&base, &draw(2, 1.0, 1.0)) - w).abs() < 1e-2);
    let w = gaussian_w2(&mean(0.0), &one(1.0), &mean(0.0), &one(4.0)).unwrap();
    assert!((w - 1.0).abs() < 1e-15);
    assert!((empirical(&base, &draw(3, 0.0, 2.0)) - w).abs() < 1e-2);
}

fn psd(entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_row_slice(3, 3, entries);
    &b * b.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_metric(
        a in prop::collection::vec(-2.0..2.0f64, 9),
        b in prop::collection::vec(-2.0..2.0f64, 9),
        c in prop::collection::vec(-2.0..2.0f64, 9),
        m in prop::collection::vec(-1.0..1.0f64, 9),
    ) {
        let (ca, cb, cc) = (psd(&a), psd(&b), psd(&c));
        let (ma, mb, mc) = (
            DVector::from_column_slice(&m[0..3]),
            DVector::from_column_slice(&m[3..6]),
            DVector::from_column_slice(&m[6..9]),
        );
        let ab = gaussian_w2(&ma, &ca, &mb, &cb).unwrap();
        let ba = gaussian_w2(&mb, &cb, &ma, &ca).unwrap();
        let bc = gaussian_w2(&mb, &cb, &mc, &cc).unwrap();
        let ac = gaussian_w2(&ma, &ca, &mc, &cc).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab), "{ab} vs {ba}");
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
    }
}
