//! Post-processing: energy and Lyapunov functionals, decay fits, bound
//! verification and the per-step diagnostics.

use crate::certify::{phi_at, DecayBound};
use crate::discretize::{quadrature, SpaceGrid};
use crate::error::{invalid, Error, Result};
use crate::model::DelayProfile;
use crate::simulate::{SimulationRecord, SystemState};

// Σ_{j≥1} Δρ·w(ρ_j)·z_j²: right-endpoint weights, the ones for which the
// upwind transport step is energy-stable.
fn delay_sum(z: &[f64], weight: impl Fn(f64) -> f64) -> f64 {
    let nrho = z.len() - 1;
    let drho = 1.0 / nrho as f64;
    drho * z
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, zj)| weight(j as f64 * drho) * zj * zj)
        .sum::<f64>()
}

/// `E = ½∫(η² + ω²) dx + (|β|/2)·τ(t)·∫₀¹ z² dρ`.
pub fn energy(state: &SystemState, grid: &SpaceGrid, beta: f64, profile: &DelayProfile) -> f64 {
    let sq: Vec<f64> = state
        .eta
        .iter()
        .zip(&state.omega)
        .map(|(e, w)| e * e + w * w)
        .collect();
    let e = 0.5 * quadrature(&sq, grid.h);
    if beta == 0.0 {
        e
    } else {
        e + 0.5 * beta.abs() * profile.tau(state.t) * delay_sum(&state.z, |_| 1.0)
    }
}

/// `V = E + μ₁V₁ + μ₂V₂` and its pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParts {
    pub v: f64,
    pub energy: f64,
    /// `V₁ = ½∫ x η ω dx`.
    pub v1: f64,
    /// `V₂ = (|β|/2)·τ(t)·∫₀¹ (1−ρ) z² dρ`.
    pub v2: f64,
}

pub fn lyapunov_v(
    state: &SystemState,
    grid: &SpaceGrid,
    beta: f64,
    profile: &DelayProfile,
    mu1: f64,
    mu2: f64,
) -> LyapunovParts {
    let xs = grid.nodes();
    let prod: Vec<f64> = xs
        .iter()
        .zip(state.eta.iter().zip(&state.omega))
        .map(|(x, (e, w))| x * e * w)
        .collect();
    let v1 = 0.5 * quadrature(&prod, grid.h);
    let v2 = if beta == 0.0 {
        0.0
    } else {
        0.5 * beta.abs() * profile.tau(state.t) * delay_sum(&state.z, |r| 1.0 - r)
    };
    let energy = energy(state, grid, beta, profile);
    LyapunovParts {
        v: energy + mu1 * v1 + mu2 * v2,
        energy,
        v1,
        v2,
    }
}

/// `((1−w)E, (1+w)E)` with `w = max{μ₁L, μ₂}`: the bracket `V` must lie in.
pub fn equivalence_bounds(energy: f64, mu1: f64, mu2: f64, l: f64) -> (f64, f64) {
    let w = (mu1 * l).max(mu2);
    ((1.0 - w) * energy, (1.0 + w) * energy)
}

/// Least-squares fit of `ln E = intercept − λ t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub lambda_fit: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

/// Fits the last `window_fraction` of the record (0.5 by default in the CLI).
pub fn fit_decay_rate(record: &SimulationRecord, window_fraction: f64) -> Result<DecayFit> {
    fit_decay_series(&record.t, &record.energy, window_fraction)
}

pub fn fit_decay_series(t: &[f64], e: &[f64], window_fraction: f64) -> Result<DecayFit> {
    if t.len() != e.len() {
        return Err(invalid("record", "time and energy lengths differ"));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(invalid(
            "window_fraction",
            format!("{window_fraction} outside (0, 1]"),
        ));
    }
    let n = t.len();
    let count = ((n as f64 * window_fraction).round() as usize).clamp(2.min(n), n);
    if count < 2 {
        return Err(invalid("record", "need at least two samples to fit"));
    }
    let (ts, es) = (&t[n - count..], &e[n - count..]);
    if let Some(k) = es.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonpositiveEnergy {
            t: ts[k],
            value: es[k],
        });
    }
    let ys: Vec<f64> = es.iter().map(|v| v.ln()).collect();
    let tm = ts.iter().sum::<f64>() / count as f64;
    let ym = ys.iter().sum::<f64>() / count as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in ts.iter().zip(&ys) {
        sxy += (x - tm) * (y - ym);
        sxx += (x - tm) * (x - tm);
    }
    if !(sxx > 0.0) {
        return Err(invalid("record", "fit window has zero time extent"));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let ss: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(DecayFit {
        lambda_fit: -slope,
        intercept,
        window: (ts[0], ts[count - 1]),
        residual: (ss / count as f64).sqrt(),
    })
}

/// Result of [`verify_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub bound: DecayBound,
    pub slack: f64,
    /// `max_t E(t) / (ζ E(0) e^{−λt})`.
    pub max_ratio: f64,
    pub argmax_t: f64,
    pub pass: bool,
    /// `E(0) = 0`: the bound holds trivially.
    pub vacuous: bool,
}

/// Checks `E(t) ≤ ζ E(0) e^{−λt}·(1 + slack)` at every recorded time.
pub fn verify_bound(
    record: &SimulationRecord,
    bound: DecayBound,
    slack: f64,
) -> Result<BoundReport> {
    verify_bound_series(&record.t, &record.energy, bound, slack)
}

pub fn verify_bound_series(
    t: &[f64],
    e: &[f64],
    bound: DecayBound,
    slack: f64,
) -> Result<BoundReport> {
    if t.is_empty() || t.len() != e.len() {
        return Err(invalid("record", "empty or inconsistent record"));
    }
    if !(slack >= 0.0) {
        return Err(invalid("slack", "must be nonnegative"));
    }
    let e0 = e[0];
    if e0 == 0.0 {
        return Ok(BoundReport {
            bound,
            slack,
            max_ratio: 0.0,
            argmax_t: t[0],
            pass: true,
            vacuous: true,
        });
    }
    let (mut max_ratio, mut argmax_t) = (f64::NEG_INFINITY, t[0]);
    for (&ti, &ei) in t.iter().zip(e) {
        let r = ei * (bound.lambda * (ti - t[0])).exp() / (bound.zeta * e0);
        if r > max_ratio {
            max_ratio = r;
            argmax_t = ti;
        }
    }
    Ok(BoundReport {
        bound,
        slack,
        max_ratio,
        argmax_t,
        pass: max_ratio <= 1.0 + slack,
        vacuous: false,
    })
}

/// Residual of the discrete energy identity, one value per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// `r_k = (E_{k+1} − E_k)/dt − ½ w_kᵀ Φ(τ̇) w_k`.
    pub series: Vec<f64>,
    /// The quadratic-form term `½ w_kᵀ Φ(τ̇) w_k`.
    pub dissipation: Vec<f64>,
    pub max_abs: f64,
}

/// Evaluates the energy identity `dE/dt = ½ wᵀΦw` step by step with
/// `w = (η_x(L), η_x(t−τ, L))` at the half step.
pub fn dissipation_residual(record: &SimulationRecord) -> Result<Residual> {
    let n = record.t.len();
    if n < 2 || record.steps.len() != n - 1 {
        return Err(Error::MissingSnapshots(
            "dissipation residual needs every step recorded",
        ));
    }
    let (alpha, beta) = (record.meta.alpha, record.meta.beta);
    let mut series = Vec::with_capacity(n - 1);
    let mut dissipation = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let dt = record.t[k + 1] - record.t[k];
        let s = record.steps[k];
        let q = 0.5 * phi_at(alpha, beta, s.tau_dot).eval(s.a, s.b);
        dissipation.push(q);
        series.push((record.energy[k + 1] - record.energy[k]) / dt - q);
    }
    let max_abs = series.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(Residual {
        series,
        dissipation,
        max_abs,
    })
}

/// Largest sample-to-sample increase of `E`, relative to `E(0)`
/// (nonpositive for a monotone record).
pub fn max_energy_increase(record: &SimulationRecord) -> f64 {
    let e0 = record.energy.first().copied().unwrap_or(0.0);
    let inc = record
        .energy
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    if e0 > 0.0 {
        inc / e0
    } else {
        inc
    }
}

/// Result of [`kato_smoothing_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KatoReport {
    /// `∫₀ᵀ∫₀ᴸ (η_x² + ω_x²) dx dt`.
    pub lhs: f64,
    /// `C·(‖(η₀, ω₀)‖² + ‖z₀‖²)`.
    pub rhs: f64,
    /// `C = max{1, L+T, (α² + ½)L}`.
    pub constant: f64,
    pub ratio: f64,
    /// Zero initial data.
    pub vacuous: bool,
    /// The inequality was derived for feasible gains; set when α = β = 0.
    pub gains_outside_hypothesis: bool,
}

/// `C(L, T, α) = max{1, L+T, (α² + ½)L}`.
pub fn kato_constant(l: f64, t: f64, alpha: f64) -> f64 {
    1f64.max(l + t).max((alpha * alpha + 0.5) * l)
}

/// Discrete Kato smoothing ratio over `[0, T]` (trapezoid rule in time).
pub fn kato_smoothing_report(record: &SimulationRecord, t_end: f64) -> Result<KatoReport> {
    let n = record.t.partition_point(|&t| t <= t_end + 1e-12);
    if n < 2 || record.t[n - 1] < t_end - 1e-9 {
        return Err(Error::MissingSnapshots("record does not cover [0, T]"));
    }
    let lhs: f64 = (0..n - 1)
        .map(|k| {
            0.5 * (record.t[k + 1] - record.t[k])
                * (record.gradient_sq[k] + record.gradient_sq[k + 1])
        })
        .sum();
    let m = &record.meta;
    let constant = kato_constant(m.l, t_end, m.alpha);
    let data = m.initial_norm_sq + m.initial_history_norm_sq;
    let rhs = constant * data;
    Ok(KatoReport {
        lhs,
        rhs,
        constant,
        ratio: if data > 0.0 { lhs / rhs } else { 0.0 },
        vacuous: data == 0.0,
        gains_outside_hypothesis: m.conservative,
    })
}

/// Step-wise Lyapunov decay: `V_{k+1} ≤ V_k e^{−λ dt}(1 + ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCheck {
    /// `max_k V_{k+1} / (V_k e^{−λ dt}) − 1`.
    pub max_excess: f64,
    pub pass: bool,
}

pub fn lyapunov_decay_check(record: &SimulationRecord, lambda: f64, eps: f64) -> LyapunovCheck {
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..record.t.len().saturating_sub(1) {
        let (v0, v1) = (record.lyapunov[k], record.lyapunov[k + 1]);
        if v0 <= 0.0 {
            continue;
        }
        let dt = record.t[k + 1] - record.t[k];
        max_excess = max_excess.max(v1 / (v0 * (-lambda * dt).exp()) - 1.0);
    }
    LyapunovCheck {
        max_excess,
        pass: max_excess <= eps,
    }
}
