//! Lyapunov decay certificates: the quadratic forms Φ and Ψ, the rate bounds
//! `f` and `g`, the optimal weight μ₁*, and the resolvent gain g₀.

use std::f64::consts::PI;

use crate::error::{check_d, invalid, Error, Result};
use crate::model::{check_gain_feasibility, CRITICAL_LENGTH_BOUND};

/// Below this `|det|` a 2×2 definiteness verdict is not trusted.
pub const DET_TOLERANCE: f64 = 1e-14;

/// Outcome of the leading-principal-minor test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    NegativeDefinite,
    NotNegativeDefinite,
    /// `|det| < 1e−14`: too close to singular to certify either way.
    Indeterminate,
}

/// Symmetric 2×2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForm2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl QuadForm2 {
    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn definiteness(&self) -> Definiteness {
        let det = self.det();
        if det.abs() < DET_TOLERANCE {
            Definiteness::Indeterminate
        } else if self.a11 < 0.0 && det > 0.0 {
            Definiteness::NegativeDefinite
        } else {
            Definiteness::NotNegativeDefinite
        }
    }

    pub fn is_negative_definite(&self) -> bool {
        self.definiteness() == Definiteness::NegativeDefinite
    }

    /// `vᵀ A v` for `v = (x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a11 * x * x + 2.0 * self.a12 * x * y + self.a22 * y * y
    }
}

/// Φ with `d` replaced by an arbitrary `τ̇` (no range check). The energy
/// identity holds with the instantaneous `τ̇`; `Φ(d)` bounds it from above.
pub fn phi_at(alpha: f64, beta: f64, tau_dot: f64) -> QuadForm2 {
    let b = beta.abs();
    QuadForm2 {
        a11: -2.0 * alpha + b,
        a12: beta,
        a22: b * (tau_dot - 1.0),
    }
}

/// `Φ = [[−2α+|β|, β], [β, |β|(d−1)]]`, the form governing `dE/dt`.
pub fn phi_matrix(alpha: f64, beta: f64, d: f64) -> Result<QuadForm2> {
    check_d(d)?;
    Ok(phi_at(alpha, beta, d))
}

/// `Ψ = Φ + Lμ₁[[α²+1, −αβ], [−αβ, β²]] + |β|μ₂[[1, 0], [0, 0]]`.
pub fn psi_matrix(alpha: f64, beta: f64, d: f64, l: f64, mu1: f64, mu2: f64) -> Result<QuadForm2> {
    check_d(d)?;
    if !(l > 0.0) {
        return Err(invalid("L", format!("{l} must be positive")));
    }
    if !(mu1 >= 0.0) || !(mu2 >= 0.0) {
        return Err(invalid("mu1/mu2", "weights must be nonnegative"));
    }
    let b = beta.abs();
    Ok(QuadForm2 {
        a11: -2.0 * alpha + b + l * mu1 * (1.0 + alpha * alpha) + b * mu2,
        a12: beta * (1.0 - l * mu1 * alpha),
        a22: b * (d - 1.0) + l * mu1 * beta * beta,
    })
}

fn require_feasible(alpha: f64, beta: f64, d: f64) -> Result<()> {
    if check_gain_feasibility(alpha, beta, d)? {
        Ok(())
    } else {
        let b = beta.abs();
        Err(Error::InfeasibleGains {
            lhs: (2.0 * alpha - b) * (1.0 - d),
            rhs: b,
        })
    }
}

fn require_certified_length(l: f64) -> Result<()> {
    if l > 0.0 && l < CRITICAL_LENGTH_BOUND {
        Ok(())
    } else {
        Err(Error::LengthOutOfRange(l))
    }
}

// (2α−|β|)(1−d) − |β| − L(1−d)(1+α²)μ₁: the common numerator of μ₂(μ₁) and g.
fn slack(alpha: f64, beta: f64, d: f64, l: f64, mu1: f64) -> f64 {
    let b = beta.abs();
    (2.0 * alpha - b) * (1.0 - d) - b - l * (1.0 - d) * (1.0 + alpha * alpha) * mu1
}

/// Largest admissible μ₁: `[(2α−|β|)(1−d) − |β|] / [L(1−d)(1+α²)]`.
pub fn mu1_upper_bound(alpha: f64, beta: f64, d: f64, l: f64) -> Result<f64> {
    require_feasible(alpha, beta, d)?;
    if !(l > 0.0) {
        return Err(invalid("L", format!("{l} must be positive")));
    }
    Ok(slack(alpha, beta, d, l, 0.0) / (l * (1.0 - d) * (1.0 + alpha * alpha)))
}

/// The μ₂ that makes `Ψ₁₁` vanish after absorbing the delay term:
/// `[(2α−|β|)(1−d) − |β| − L(1−d)(1+α²)μ₁] / [|β|(1−d)]`.
pub fn mu2_of_mu1(alpha: f64, beta: f64, d: f64, l: f64, mu1: f64) -> Result<f64> {
    if beta == 0.0 {
        return Err(Error::DegenerateDelayGain);
    }
    let upper = mu1_upper_bound(alpha, beta, d, l)?;
    if !(0.0..=upper).contains(&mu1) {
        return Err(invalid("mu1", format!("{mu1} outside [0, {upper}]")));
    }
    Ok(slack(alpha, beta, d, l, mu1) / (beta.abs() * (1.0 - d)))
}

/// Denominator choice for the Poincaré-type rate bound `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateVariant {
    /// `L²(1+μ₁)`.
    Theorem,
    /// `L²(1+μ₁L)`.
    #[default]
    Proposition,
}

impl RateVariant {
    /// The variant giving the smaller `f` at this length (proposition when `L > 1`).
    pub fn conservative(l: f64) -> Self {
        if l >= 1.0 {
            Self::Proposition
        } else {
            Self::Theorem
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Theorem => "theorem",
            Self::Proposition => "proposition",
        }
    }
}

impl std::str::FromStr for RateVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem" => Ok(Self::Theorem),
            "proposition" => Ok(Self::Proposition),
            other => Err(invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// `f(μ₁) = μ₁(3π² − L²) / (L²·denominator)`.
pub fn rate_f(mu1: f64, l: f64, variant: RateVariant) -> Result<f64> {
    require_certified_length(l)?;
    if !(mu1 >= 0.0) {
        return Err(invalid("mu1", format!("{mu1} must be nonnegative")));
    }
    let den = match variant {
        RateVariant::Theorem => 1.0 + mu1,
        RateVariant::Proposition => 1.0 + mu1 * l,
    };
    Ok(mu1 * (3.0 * PI * PI - l * l) / (l * l * den))
}

/// `g(μ₁) = (1−d)·slack(μ₁) / (M·[2α(1−d) − |β| − L(1−d)(1+α²)μ₁])`.
///
/// Equals `μ₂(1−d)/(M(1+μ₂))` with `μ₂ = mu2_of_mu1(μ₁)`.
pub fn rate_g(mu1: f64, alpha: f64, beta: f64, d: f64, l: f64, m: f64) -> Result<f64> {
    let upper = mu1_upper_bound(alpha, beta, d, l)?;
    if !(m > 0.0) {
        return Err(invalid("M", format!("{m} must be positive")));
    }
    if !(0.0..=upper).contains(&mu1) {
        return Err(invalid("mu1", format!("{mu1} outside [0, {upper}]")));
    }
    let num = slack(alpha, beta, d, l, mu1);
    let den = 2.0 * alpha * (1.0 - d) - beta.abs() - l * (1.0 - d) * (1.0 + alpha * alpha) * mu1;
    if !(den > 0.0) {
        return Err(Error::Constraint(format!("g denominator {den} ≤ 0")));
    }
    Ok((1.0 - d) * num / (m * den))
}

/// The parameters a certificate depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
    pub l: f64,
    pub m: f64,
}

impl Problem {
    /// The Figure-1 setting: `L = 5, d = 1/2, α = 1, β = 1/2, M = 3`.
    pub const FIGURE_ONE: Problem = Problem {
        alpha: 1.0,
        beta: 0.5,
        d: 0.5,
        l: 5.0,
        m: 3.0,
    };

    pub fn mu1_upper_bound(&self) -> Result<f64> {
        mu1_upper_bound(self.alpha, self.beta, self.d, self.l)
    }

    pub fn mu2_of_mu1(&self, mu1: f64) -> Result<f64> {
        mu2_of_mu1(self.alpha, self.beta, self.d, self.l, mu1)
    }

    pub fn f(&self, mu1: f64, variant: RateVariant) -> Result<f64> {
        rate_f(mu1, self.l, variant)
    }

    pub fn g(&self, mu1: f64) -> Result<f64> {
        rate_g(mu1, self.alpha, self.beta, self.d, self.l, self.m)
    }
}

/// Result of [`optimize_mu1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimum {
    pub mu1: f64,
    pub lambda: f64,
    /// `f(μ₁) − g(μ₁)` at the returned point.
    pub gap: f64,
    pub iterations: usize,
}

/// Iteration cap for the bisection in [`optimize_mu1`].
pub const MAX_BISECTIONS: usize = 200;

/// Maximizes `min{f, g}` over `(0, μ₁max)` by bisecting on `f − g`, which
/// is strictly increasing there. Returns `λ* = f(μ₁*)`.
pub fn optimize_mu1(p: &Problem, tol: f64) -> Result<Optimum> {
    if p.beta == 0.0 {
        return Err(Error::DegenerateDelayGain);
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    require_certified_length(p.l)?;
    let upper = p.mu1_upper_bound()?;
    let variant = RateVariant::Proposition;
    let h = |mu1: f64| -> Result<f64> { Ok(p.f(mu1, variant)? - p.g(mu1)?) };
    let (mut lo, mut hi) = (0.0, upper);
    let mut mid = 0.5 * (lo + hi);
    let mut gap = h(mid)?;
    let mut iterations = 1;
    while gap.abs() > tol && iterations < MAX_BISECTIONS {
        if gap < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == mid {
            break;
        }
        mid = next;
        gap = h(mid)?;
        iterations += 1;
    }
    Ok(Optimum {
        mu1: mid,
        lambda: p.f(mid, variant)?,
        gap,
        iterations,
    })
}

/// One row of the Figure-1 data: `(μ₁, f, g, min{f, g})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub mu1: f64,
    pub f: f64,
    pub g: f64,
    pub min: f64,
}

/// Samples `f` (proposition variant) and `g` on `points` equispaced values
/// of μ₁ covering `[0, μ₁max]`.
pub fn rate_curves(p: &Problem, points: usize) -> Result<Vec<CurvePoint>> {
    if points < 2 {
        return Err(invalid("points", "need at least 2"));
    }
    let upper = p.mu1_upper_bound()?;
    (0..points)
        .map(|k| {
            let mu1 = if k + 1 == points {
                upper
            } else {
                upper * k as f64 / (points - 1) as f64
            };
            let f = p.f(mu1, RateVariant::Proposition)?;
            let g = p.g(mu1)?;
            Ok(CurvePoint {
                mu1,
                f,
                g,
                min: f.min(g),
            })
        })
        .collect()
}

/// A decay certificate `E(t) ≤ ζ E(0) e^{−λt}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub mu1: f64,
    pub mu2: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub variant: RateVariant,
    pub phi: QuadForm2,
    pub psi: QuadForm2,
    pub feasible: bool,
    /// Failed checks, e.g. `"a11 ≥ 0"`. Empty when feasible.
    pub diagnostics: Vec<String>,
}

impl Certificate {
    pub fn bound(&self) -> DecayBound {
        DecayBound {
            lambda: self.lambda,
            zeta: self.zeta,
        }
    }
}

/// The pair `(λ, ζ)` a record is checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayBound {
    pub lambda: f64,
    pub zeta: f64,
}

/// Assembles `(μ₁, μ₂, λ, ζ)` and checks Ψ. Hard preconditions (feasible
/// gains, `0 < L < √3π`, `0 < μ₁L < 1`, `0 < μ₂ < 1`) are errors; an
/// indefinite Ψ yields `feasible = false` with diagnostics.
///
/// With `β = 0` there is no delay channel: μ₂ is forced to 0, λ comes from
/// `f` alone and only the `a11` entry of Ψ is checked.
pub fn build_certificate(
    p: &Problem,
    mu1: f64,
    mu2: f64,
    variant: RateVariant,
) -> Result<Certificate> {
    require_feasible(p.alpha, p.beta, p.d)?;
    require_certified_length(p.l)?;
    if !(p.m > 0.0) {
        return Err(invalid("M", format!("{} must be positive", p.m)));
    }
    if !(mu1 > 0.0) {
        return Err(Error::Constraint(format!("μ₁ > 0 (got {mu1})")));
    }
    if !(mu1 * p.l < 1.0) {
        return Err(Error::Constraint(format!("μ₁L < 1 (got {})", mu1 * p.l)));
    }
    let delay = p.beta != 0.0;
    let mu2 = if delay { mu2 } else { 0.0 };
    if delay && !(mu2 > 0.0 && mu2 < 1.0) {
        return Err(Error::Constraint(format!("0 < μ₂ < 1 (got {mu2})")));
    }
    let phi = phi_matrix(p.alpha, p.beta, p.d)?;
    let psi = psi_matrix(p.alpha, p.beta, p.d, p.l, mu1, mu2)?;
    let mut diagnostics = Vec::new();
    if psi.a11 >= 0.0 {
        diagnostics.push("a11 ≥ 0".to_string());
    }
    if delay {
        match psi.definiteness() {
            Definiteness::NegativeDefinite => {}
            Definiteness::Indeterminate => {
                diagnostics.push("|det Ψ| < 1e-14 (indeterminate)".to_string())
            }
            Definiteness::NotNegativeDefinite => {
                if psi.det() <= 0.0 {
                    diagnostics.push("det Ψ ≤ 0".to_string());
                }
            }
        }
    }
    let f = rate_f(mu1, p.l, variant)?;
    let lambda = if delay {
        f.min(mu2 * (1.0 - p.d) / (p.m * (1.0 + mu2)))
    } else {
        f
    };
    let w = (mu1 * p.l).max(mu2);
    Ok(Certificate {
        mu1,
        mu2,
        lambda,
        zeta: (1.0 + w) / (1.0 - w),
        variant,
        phi,
        psi,
        feasible: diagnostics.is_empty(),
        diagnostics,
    })
}

/// Certificate at the optimal weight: μ₁* from [`optimize_mu1`] and
/// `μ₂ = mu2_of_mu1(μ₁*)`.
pub fn optimal_certificate(p: &Problem, tol: f64) -> Result<Certificate> {
    let opt = optimize_mu1(p, tol)?;
    build_certificate(p, opt.mu1, p.mu2_of_mu1(opt.mu1)?, RateVariant::Proposition)
}

/// `g₀ = exp((λτ/τ̇)·ln(1−τ̇))`, or `e^{−λτ}` when `τ̇ = 0`. Lies in `(0, 1)`.
pub fn resolvent_delay_gain_g0(lambda: f64, tau: f64, tau_dot: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("{lambda} must be positive")));
    }
    if !(tau > 0.0) {
        return Err(invalid("tau", format!("{tau} must be positive")));
    }
    if !(tau_dot < 1.0) {
        return Err(invalid("tau_dot", format!("{tau_dot} must be below 1")));
    }
    if tau_dot == 0.0 {
        return Ok((-lambda * tau).exp());
    }
    Ok((lambda * tau / tau_dot * (-tau_dot).ln_1p()).exp())
}
