use kdv_delay::certify::*;
use kdv_delay::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

// High-precision reference values for the Figure-1 problem, computed
// independently at 50 significant digits.
const MU1_STAR: f64 = 0.047_772_310_628_338_06;
const LAMBDA_STAR: f64 = 0.007_108_902_699_132_410;
const MU2_STAR: f64 = 0.044_553_787_433_238_79;
const ZETA_STAR: f64 = 1.627_642_852_959_590;

const P: Problem = Problem::FIGURE_ONE;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn phi_figure_one() {
    let phi = phi_matrix(1.0, 0.5, 0.5).unwrap();
    assert_eq!((phi.a11, phi.a12, phi.a22), (-1.5, 0.5, -0.25));
    assert_eq!(phi.det(), 0.125);
    assert!(phi.is_negative_definite());
}

#[test]
fn phi_degenerate_cases() {
    let phi = phi_matrix(0.7, 0.0, 0.3).unwrap();
    assert_eq!((phi.a11, phi.a12, phi.a22), (-1.4, 0.0, 0.0));
    assert!(!phi.is_negative_definite());
    assert_eq!(phi.definiteness(), Definiteness::Indeterminate);

    let phi = phi_matrix(0.5, 1.0, 0.0).unwrap();
    assert_eq!((phi.a11, phi.a12, phi.a22), (0.0, 1.0, -1.0));
    assert_eq!(phi.definiteness(), Definiteness::NotNegativeDefinite);
}

#[test]
fn psi_reduces_to_phi_at_zero_weights() {
    let psi = psi_matrix(1.0, 0.5, 0.5, 5.0, 0.0, 0.0).unwrap();
    assert_eq!(psi, phi_matrix(1.0, 0.5, 0.5).unwrap());
}

#[test]
fn psi_hand_check() {
    let mu2 = P.mu2_of_mu1(0.04).unwrap();
    assert!((mu2 - 0.2).abs() < 1e-14);
    let psi = psi_matrix(1.0, 0.5, 0.5, 5.0, 0.04, mu2).unwrap();
    assert!((psi.a11 + 1.0).abs() < 1e-14);
    assert!((psi.a12 - 0.4).abs() < 1e-14);
    assert!((psi.a22 + 0.2).abs() < 1e-14);
    assert!((psi.det() - 0.04).abs() < 1e-14);
    assert!(psi.is_negative_definite());
}

#[test]
fn psi_large_mu1_loses_definiteness() {
    let psi = psi_matrix(1.0, 0.5, 0.5, 5.0, 0.2, 0.0).unwrap();
    assert!(psi.a11 > 0.0);
    assert!(!psi.is_negative_definite());
}

#[test]
fn mu1_bounds() {
    assert_eq!(mu1_upper_bound(1.0, 0.5, 0.5, 5.0).unwrap(), 0.05);
    assert!(close(
        mu1_upper_bound(1.0, 0.0, 0.3, 5.0).unwrap(),
        1.0 / 5.0,
        1e-15
    ));
    assert!(matches!(
        mu1_upper_bound(0.5, 1.0, 0.0, 5.0),
        Err(Error::InfeasibleGains { .. })
    ));
}

#[test]
fn mu2_examples() {
    assert_eq!(P.mu2_of_mu1(0.0).unwrap(), 1.0);
    assert_eq!(P.mu2_of_mu1(0.05).unwrap(), 0.0);
    assert!((P.mu2_of_mu1(0.04).unwrap() - 0.2).abs() < 1e-14);
    assert!(P.mu2_of_mu1(0.051).is_err());
    assert!(matches!(
        mu2_of_mu1(1.0, 0.0, 0.5, 5.0, 0.01),
        Err(Error::DegenerateDelayGain)
    ));
}

#[test]
fn rate_f_examples() {
    for v in [RateVariant::Theorem, RateVariant::Proposition] {
        assert_eq!(rate_f(0.0, 5.0, v).unwrap(), 0.0);
    }
    let prop = rate_f(0.05, 5.0, RateVariant::Proposition).unwrap();
    let thm = rate_f(0.05, 5.0, RateVariant::Theorem).unwrap();
    assert!(close(prop, 0.0073741011252289, 1e-12), "{prop}");
    assert!(close(
        thm,
        0.05 * (3.0 * PI * PI - 25.0) / (25.0 * 1.05),
        1e-14
    ));
    assert!((thm - 0.008778).abs() < 1e-6);
    assert!(matches!(
        rate_f(0.01, 6.0, RateVariant::Proposition),
        Err(Error::LengthOutOfRange(_))
    ));
}

#[test]
fn rate_g_examples() {
    assert!(close(P.g(0.0).unwrap(), 1.0 / 12.0, 1e-14));
    assert_eq!(P.g(0.05).unwrap(), 0.0);
    // μ₂(0.04) = 0.2 ⇒ g = 0.2·0.5/(3·1.2).
    assert!(close(P.g(0.04).unwrap(), 0.1 / 3.6, 1e-13));
}

#[test]
fn conservative_variant() {
    assert_eq!(RateVariant::conservative(5.0), RateVariant::Proposition);
    assert_eq!(RateVariant::conservative(0.5), RateVariant::Theorem);
    assert_eq!(
        "theorem".parse::<RateVariant>().unwrap(),
        RateVariant::Theorem
    );
    assert!("other".parse::<RateVariant>().is_err());
}

#[test]
fn optimum_matches_reference() {
    let opt = optimize_mu1(&P, 1e-12).unwrap();
    assert!(close(opt.mu1, MU1_STAR, 1e-9), "{}", opt.mu1);
    assert!(close(opt.lambda, LAMBDA_STAR, 1e-9), "{}", opt.lambda);
    assert!(opt.gap.abs() <= 1e-12);
    assert!(opt.iterations <= MAX_BISECTIONS);
}

#[test]
fn optimum_agrees_with_grid_scan() {
    let upper = P.mu1_upper_bound().unwrap();
    let n = 100_000;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for k in 0..=n {
        let mu1 = upper * k as f64 / n as f64;
        let v = P
            .f(mu1, RateVariant::Proposition)
            .unwrap()
            .min(P.g(mu1).unwrap());
        if v > best {
            best = v;
            arg = mu1;
        }
    }
    let opt = optimize_mu1(&P, 1e-12).unwrap();
    assert!((opt.mu1 - arg).abs() <= upper / n as f64);
    assert!(opt.lambda >= best - 1e-15);
}

#[test]
fn optimizer_rejects_degenerate_gain() {
    let p = Problem { beta: 0.0, ..P };
    let err = optimize_mu1(&p, 1e-12).unwrap_err();
    assert!(matches!(err, Error::DegenerateDelayGain));
    assert!(err.to_string().contains("β≠0"));
}

#[test]
fn optimal_certificate_reference() {
    let c = optimal_certificate(&P, 1e-12).unwrap();
    assert!(c.feasible, "{:?}", c.diagnostics);
    assert!(close(c.mu2, MU2_STAR, 1e-8));
    assert!(close(c.lambda, LAMBDA_STAR, 1e-9));
    assert!(close(c.zeta, ZETA_STAR, 1e-9));
    let w = (c.mu1 * P.l).max(c.mu2);
    assert_eq!(c.zeta, (1.0 + w) / (1.0 - w));
    assert!(c.phi.is_negative_definite() && c.psi.is_negative_definite());
}

#[test]
fn certificate_at_fixed_mu1() {
    let mu2 = P.mu2_of_mu1(0.04).unwrap();
    let c = build_certificate(&P, 0.04, mu2, RateVariant::Proposition).unwrap();
    assert!(c.feasible);
    let f = rate_f(0.04, 5.0, RateVariant::Proposition).unwrap();
    assert_eq!(c.lambda, f.min(P.g(0.04).unwrap()));
}

#[test]
fn certificate_hard_constraints() {
    let err = build_certificate(&P, 0.2, 0.1, RateVariant::Proposition).unwrap_err();
    assert!(err.to_string().contains("μ₁L < 1"), "{err}");
    assert!(build_certificate(&P, 0.01, 1.0, RateVariant::Proposition).is_err());
    assert!(build_certificate(&P, 0.01, 0.0, RateVariant::Proposition).is_err());
    let far = Problem { l: 6.0, ..P };
    let err = build_certificate(&far, 0.01, 0.1, RateVariant::Proposition).unwrap_err();
    assert!(err.to_string().contains("outside certified range (0, √3π)"));
}

#[test]
fn certificate_reports_positive_a11() {
    // μ₂ above the a11 threshold: −1.5 + 5·0.04·2 + 0.5·μ₂ ≥ 0 for μ₂ ≥ 2.2,
    // which is out of range, so push μ₁ instead while keeping μ₁L < 1.
    let c = build_certificate(&P, 0.15, 0.9, RateVariant::Proposition).unwrap();
    assert!(!c.feasible);
    assert!(
        c.diagnostics.iter().any(|d| d == "a11 ≥ 0"),
        "{:?}",
        c.diagnostics
    );
}

#[test]
fn certificate_without_delay() {
    let p = Problem { beta: 0.0, ..P };
    let c = build_certificate(&p, 0.1, 0.3, RateVariant::Proposition).unwrap();
    assert_eq!(c.mu2, 0.0);
    assert!(c.feasible);
    assert_eq!(
        c.lambda,
        rate_f(0.1, 5.0, RateVariant::Proposition).unwrap()
    );
}

#[test]
fn g0_examples() {
    assert!(close(
        resolvent_delay_gain_g0(2f64.ln(), 1.0, 0.0).unwrap(),
        0.5,
        1e-15
    ));
    assert!(close(
        resolvent_delay_gain_g0(1.0, 1.0, 0.5).unwrap(),
        0.25,
        1e-15
    ));
    for td in [1e-8, -1e-8] {
        let g = resolvent_delay_gain_g0(0.3, 2.0, td).unwrap();
        assert!(close(g, (-0.6f64).exp(), 1e-6));
    }
    assert!(resolvent_delay_gain_g0(0.0, 1.0, 0.0).is_err());
    assert!(resolvent_delay_gain_g0(1.0, 1.0, 1.0).is_err());
}

proptest! {
    #[test]
    fn g_identity(alpha in 0.1..5.0f64, frac in 0.0..1.0f64, d in 0.0..0.95f64,
                  l in 0.1..5.4f64, m in 0.1..10.0f64, t in 0.0..1.0f64, sign in any::<bool>()) {
        // β strictly inside the feasible range for (α, d).
        let bmax = 2.0 * alpha * (1.0 - d) / (2.0 - d);
        let beta = (frac * 0.999 + 0.0005) * bmax * if sign { 1.0 } else { -1.0 };
        let p = Problem { alpha, beta, d, l, m };
        let mu1 = t * p.mu1_upper_bound().unwrap();
        let mu2 = p.mu2_of_mu1(mu1).unwrap();
        let g = p.g(mu1).unwrap();
        let identity = mu2 * (1.0 - d) / (m * (1.0 + mu2));
        prop_assert!((g - identity).abs() <= 1e-12 * identity.abs().max(1e-300) || (g - identity).abs() < 1e-300);
    }

    #[test]
    fn f_minus_g_is_increasing(t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let u = P.mu1_upper_bound().unwrap();
        let (a, b) = (t1.min(t2) * u, t1.max(t2) * u);
        prop_assume!(b > a);
        let h = |x: f64| P.f(x, RateVariant::Proposition).unwrap() - P.g(x).unwrap();
        prop_assert!(h(b) > h(a));
    }

    #[test]
    fn definiteness_is_the_minor_test(a11 in -2.0..2.0f64, a12 in -2.0..2.0f64, a22 in -2.0..2.0f64) {
        let q = QuadForm2 { a11, a12, a22 };
        let det = a11 * a22 - a12 * a12;
        prop_assume!(det.abs() >= DET_TOLERANCE);
        prop_assert_eq!(q.is_negative_definite(), a11 < 0.0 && det > 0.0);
    }
}
