use std::f64::consts::{PI, TAU};

use apsde_core::evolution::{
    check_dissipativity, check_exponential_stability, convolution_covariance, propagator, variance_condition,
    EvolutionSystem, StochasticConvolution,
};
use apsde_core::gp_core::{ou_spec, periodic_example_propagator, periodic_example_spec, OuParams};
use apsde_core::linalg::frobenius;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn periodic_propagator_matches_closed_form() {
    let sys = EvolutionSystem::<f64>::periodic_example();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let a: f64 = rng.random_range(-10.0..10.0);
        let b: f64 = rng.random_range(-10.0..10.0);
        let (s, t) = if a <= b { (a, b) } else { (b, a) };
        let eval = propagator(&sys, s, t, 1e-3).unwrap();
        let exact = periodic_example_propagator(s, t);
        assert!(
            (eval.u[(0, 0)] - exact).abs() <= 1e-8,
            "U({t}, {s}) = {} vs {exact}",
            eval.u[(0, 0)]
        );
        assert!(eval.err_est <= 1e-6 * exact.abs().max(f64::MIN_POSITIVE));
    }
}

#[test]
fn propagator_identity_and_ordering() {
    let sys = EvolutionSystem::<f64>::periodic_example();
    assert_eq!(propagator(&sys, 2.0, 2.0, 1e-3).unwrap().u, DMatrix::identity(1, 1));
    assert!(propagator(&sys, 2.0, 1.0, 1e-3).is_err());
    assert!(propagator(&sys, 0.0, 1.0, 0.0).is_err());
}

fn rotating_system() -> EvolutionSystem<f64> {
    EvolutionSystem::new(
        "rotating",
        |t: f64| DMatrix::from_row_slice(2, 2, &[-1.0 + 0.5 * t.cos(), 2.0, -2.0, -1.0 + 0.3 * (2.0 * t).sin()]),
        |_| DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        Some(TAU),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cocycle_identity(s in -10.0..10.0f64, a in 0.0..5.0f64, b in 0.0..5.0f64) {
        for sys in [EvolutionSystem::<f64>::periodic_example(), rotating_system()] {
            let r = s + a;
            let t = r + b;
            let trs = propagator(&sys, s, t, 1e-3).unwrap().u;
            let trr = propagator(&sys, r, t, 1e-3).unwrap().u;
            let rs = propagator(&sys, s, r, 1e-3).unwrap().u;
            let defect = frobenius(&(&trr * &rs - &trs));
            prop_assert!(defect <= 1e-7, "cocycle defect {defect}");
        }
    }
}

#[test]
fn periodic_stability_certificate() {
    let sys = EvolutionSystem::<f64>::periodic_example();
    let est = check_exponential_stability(&sys, 50.0, 0.01).unwrap();
    assert!((est.delta - 1.0).abs() <= 0.01, "delta {}", est.delta);
    assert!(est.m >= 1.99f64.exp() && est.m <= 2.01f64.exp(), "M {}", est.m);
    assert!(est.max_violation() <= 1e-12);
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * TAU / 1000.0).collect();
    let beta = check_dissipativity(&sys, &grid).unwrap();
    assert!(beta.abs() <= 1e-9, "beta {beta}");
    assert_eq!(beta, est.beta);
    assert!(!est.is_dissipative());
}

#[test]
fn periodic_variance_condition() {
    let sys = EvolutionSystem::<f64>::periodic_example();
    for t in [0.0, 1.0, PI / 2.0, PI, 5.5] {
        let v = variance_condition(&sys, t, 0.01, 1e-12).unwrap();
        assert!((v - 0.5).abs() <= 1e-6, "t = {t}: {v}");
    }
}

#[test]
fn convolution_reproduces_both_kernels() {
    let pairs = [
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
    let periodic = StochasticConvolution::new(EvolutionSystem::periodic_example(), 0.01, 1e-12).unwrap();
    let pk = periodic_example_spec::<f64>();
    let params = OuParams::new(0.5, 2.0).unwrap();
    let ou = StochasticConvolution::new(EvolutionSystem::ou(params), 0.01, 1e-12).unwrap();
    let ok = ou_spec(params);
    for (t1, t2) in pairs {
        let a = periodic.covariance(t1, t2).unwrap()[(0, 0)];
        assert!(
            (a - pk.kernel(t1, t2)[(0, 0)]).abs() <= 1e-6,
            "periodic ({t1}, {t2}): {a}"
        );
        let b = ou.covariance(t1, t2).unwrap()[(0, 0)];
        assert!((b - ok.kernel(t1, t2)[(0, 0)]).abs() <= 1e-6, "ou ({t1}, {t2}): {b}");
    }
    let c = convolution_covariance(&EvolutionSystem::<f64>::periodic_example(), 0.0, TAU, 0.01, 1e-12).unwrap();
    assert!((c[(0, 0)] - 0.5 * (-TAU).exp()).abs() <= 1e-6);
}

#[test]
fn ou_system_certificate() {
    let sys = EvolutionSystem::ou(OuParams::<f64>::new(2.0, 1.0).unwrap());
    let est = check_exponential_stability(&sys, 20.0, 0.05).unwrap();
    assert!((est.delta - 2.0).abs() < 1e-9);
    assert!((est.m - 1.0).abs() < 1e-9);
    assert!((est.beta - 2.0).abs() < 1e-15);
    assert!(est.is_dissipative());
}

#[test]
fn vector_convolution_is_psd_and_periodic() {
    let conv = StochasticConvolution::new(rotating_system(), 0.01, 1e-12).unwrap();
    let a = conv.sigma(0.4).unwrap();
    let b = conv.sigma(0.4 + TAU).unwrap();
    assert!(frobenius(&(&a - &b)) < 1e-7);
    let eig = a.symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&v| v > 0.0));
    let c12 = conv.covariance(0.4, 1.9).unwrap();
    let c21 = conv.covariance(1.9, 0.4).unwrap();
    assert_eq!(c12, c21.transpose());
}
