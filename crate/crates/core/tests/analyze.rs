use kdv_delay::analyze::*;
use kdv_delay::certify::DecayBound;
use kdv_delay::config::Config;
use kdv_delay::discretize::{RhoGrid, SpaceGrid};
use kdv_delay::model::DelayProfile;
use kdv_delay::simulate::{run_simulation, LyapunovWeights, Setup, SystemState};
use kdv_delay::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn setup(overrides: &[&str]) -> Setup {
    let text = Config::figure_one().to_toml_string();
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Config::from_toml_with_overrides(&text, &ov)
        .unwrap()
        .setup()
        .unwrap()
}

fn sine_state(grid: &SpaceGrid, rho: &RhoGrid) -> SystemState {
    let mut s = SystemState::zeros(grid, rho);
    for (i, x) in grid.nodes().iter().enumerate() {
        s.eta[i] = (PI * x / grid.l).sin();
    }
    s
}

#[test]
fn energy_of_a_sine() {
    let grid = SpaceGrid::new(5.0, 256).unwrap();
    let rho = RhoGrid::new(16).unwrap();
    let p = DelayProfile::constant(2.0).unwrap();
    let s = sine_state(&grid, &rho);
    assert!((energy(&s, &grid, 0.0, &p) - 1.25).abs() < 1e-10);
    // A unit delay field adds (|β|/2)·τ.
    let mut s = s;
    s.z.iter_mut().for_each(|z| *z = 1.0);
    assert!((energy(&s, &grid, -0.5, &p) - 1.75).abs() < 1e-10);
}

#[test]
fn lyapunov_parts() {
    let grid = SpaceGrid::new(5.0, 128).unwrap();
    let rho = RhoGrid::new(64).unwrap();
    let p = DelayProfile::constant(2.0).unwrap();
    let mut s = SystemState::zeros(&grid, &rho);
    s.z.iter_mut().for_each(|z| *z = 1.0);
    let v = lyapunov_v(&s, &grid, 0.5, &p, 0.04, 0.2);
    assert_eq!(v.v1, 0.0);
    // ∫(1−ρ) on right-endpoint nodes: (1 − 1/nrho)/2.
    assert!((v.v2 - 0.5 * 0.5 * 2.0 * 0.5 * (1.0 - 1.0 / 64.0)).abs() < 1e-14);
    assert!((v.v - (v.energy + 0.2 * v.v2)).abs() < 1e-15);
    assert_eq!(equivalence_bounds(2.0, 0.04, 0.1, 5.0), (1.6, 2.4));
}

#[test]
fn fit_recovers_exact_exponential() {
    let t: Vec<f64> = (0..=200).map(|k| 0.5 * k as f64).collect();
    let e: Vec<f64> = t.iter().map(|t| 3.0 * (-0.02 * t).exp()).collect();
    let fit = fit_decay_series(&t, &e, 0.5).unwrap();
    assert!((fit.lambda_fit - 0.02).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
    assert!(fit.residual < 1e-12);
    assert_eq!(fit.window, (50.0, 100.0));
    // Scaling E does not change the rate.
    let scaled: Vec<f64> = e.iter().map(|v| 1e-7 * v).collect();
    let f2 = fit_decay_series(&t, &scaled, 0.5).unwrap();
    assert!((f2.lambda_fit - fit.lambda_fit).abs() < 1e-12);
}

#[test]
fn fit_rejects_bad_input() {
    let t = [0.0, 1.0, 2.0];
    assert!(fit_decay_series(&t, &[1.0, 0.5], 0.5).is_err());
    assert!(fit_decay_series(&t, &[1.0, 0.5, 0.2], 0.0).is_err());
    assert!(matches!(
        fit_decay_series(&t, &[1.0, 0.5, 0.0], 1.0),
        Err(Error::NonpositiveEnergy { .. })
    ));
}

#[test]
fn bound_worst_case_is_constant_energy() {
    let b = DecayBound {
        lambda: 0.01,
        zeta: 1.5,
    };
    let t: Vec<f64> = (0..=100).map(|k| k as f64).collect();
    let e = vec![1.0; t.len()];
    let r = verify_bound_series(&t, &e, b, 0.0).unwrap();
    let expected = (0.01f64 * 100.0).exp() / 1.5;
    assert!((r.max_ratio - expected).abs() < 1e-12);
    assert_eq!(r.argmax_t, 100.0);
    assert!(!r.pass);
    assert!(
        verify_bound_series(&t, &e, b, expected - 1.0 + 1e-9)
            .unwrap()
            .pass
    );
    // Larger ζ only helps.
    let wide = DecayBound { zeta: 3.0, ..b };
    assert!(verify_bound_series(&t, &e, wide, 0.0).unwrap().pass);
}

#[test]
fn bound_on_zero_energy_is_vacuous() {
    let b = DecayBound {
        lambda: 0.01,
        zeta: 1.5,
    };
    let r = verify_bound_series(&[0.0, 1.0], &[0.0, 0.0], b, 0.0).unwrap();
    assert!(r.pass && r.vacuous);
    assert!(verify_bound_series(&[0.0], &[1.0], b, -0.1).is_err());
}

#[test]
fn zero_run_diagnostics() {
    let s = setup(&[
        "ic.kind=zero",
        "grid.nx=32",
        "grid.nrho=16",
        "time.horizon=1",
    ]);
    let rec = run_simulation(&s, LyapunovWeights::default()).unwrap();
    let r = dissipation_residual(&rec).unwrap();
    assert_eq!(r.max_abs, 0.0);
    let k = kato_smoothing_report(&rec, 1.0).unwrap();
    assert!(k.vacuous);
    assert_eq!(k.ratio, 0.0);
}

#[test]
fn residual_needs_every_step() {
    let s = setup(&[
        "grid.nx=32",
        "grid.nrho=16",
        "time.horizon=1",
        "scheme.record_every=10",
    ]);
    let rec = run_simulation(&s, LyapunovWeights::default()).unwrap();
    assert!(matches!(
        dissipation_residual(&rec),
        Err(Error::MissingSnapshots(_))
    ));
}

#[test]
fn kato_constant_examples() {
    assert_eq!(kato_constant(5.0, 50.0, 1.0), 55.0);
    assert_eq!(kato_constant(5.0, 0.0, 3.0), 47.5);
    assert_eq!(kato_constant(0.1, 0.1, 0.0), 1.0);
}

#[test]
fn kato_on_figure_run() {
    let s = setup(&["grid.nx=64", "grid.nrho=64", "time.horizon=10"]);
    let rec = run_simulation(&s, LyapunovWeights::default()).unwrap();
    let k = kato_smoothing_report(&rec, 10.0).unwrap();
    assert!(k.ratio > 0.0 && k.ratio <= 1.0, "{k:?}");
    assert!(!k.gains_outside_hypothesis);
    assert!(kato_smoothing_report(&rec, 20.0).is_err());
}

#[test]
fn conservative_kato_is_flagged() {
    let s = setup(&[
        "gains.alpha=0",
        "gains.beta=0",
        "grid.nx=64",
        "time.horizon=2",
    ]);
    let rec = run_simulation(&s, LyapunovWeights::default()).unwrap();
    assert!(
        kato_smoothing_report(&rec, 2.0)
            .unwrap()
            .gains_outside_hypothesis
    );
}

#[test]
fn lyapunov_check_on_synthetic_series() {
    let s = setup(&[
        "ic.kind=zero",
        "grid.nx=32",
        "grid.nrho=16",
        "time.horizon=1",
    ]);
    let mut rec = run_simulation(&s, LyapunovWeights::default()).unwrap();
    rec.lyapunov = rec.t.iter().map(|t| (-0.1 * t).exp()).collect();
    let c = lyapunov_decay_check(&rec, 0.1, 1e-12);
    assert!(c.pass && c.max_excess.abs() < 1e-12);
    assert!(!lyapunov_decay_check(&rec, 0.2, 1e-6).pass);
}

proptest! {
    #[test]
    fn v_lies_in_its_bracket(
        eta in prop::collection::vec(-1.0..1.0f64, 63),
        omega in prop::collection::vec(-1.0..1.0f64, 63),
        z in prop::collection::vec(-1.0..1.0f64, 17),
        t in 0.0..1.0f64,
    ) {
        let grid = SpaceGrid::new(5.0, 64).unwrap();
        let rho = RhoGrid::new(16).unwrap();
        let p = DelayProfile::constant(2.0).unwrap();
        let mut s = SystemState::zeros(&grid, &rho);
        s.eta[1..64].copy_from_slice(&eta);
        s.omega[1..64].copy_from_slice(&omega);
        s.z.copy_from_slice(&z);
        let (mu1, mu2) = (t * 0.19, t * 0.9);
        let v = lyapunov_v(&s, &grid, 0.5, &p, mu1, mu2);
        let (lo, hi) = equivalence_bounds(v.energy, mu1, mu2, grid.l);
        prop_assert!(lo <= v.v * (1.0 + 1e-12) && v.v <= hi * (1.0 + 1e-12));
    }
}
