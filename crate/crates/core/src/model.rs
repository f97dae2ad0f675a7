//! Domain types and the scalar feasibility formulas: gains, delay profiles
//! and the spatial length.

use std::f64::consts::PI;

use crate::error::{check_d, invalid, Error, Result};

/// √3·π, the supremum of spatial lengths covered by the decay certificate.
pub const CRITICAL_LENGTH_BOUND: f64 = 5.441_398_092_702_653;

/// Feedback gains of the boundary law `ω_x(t,L) = −α η_x(t,L) + β η_x(t−τ(t),L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl GainConfig {
    /// Validates `α ≥ 0`, and `β = 0` whenever `α = 0`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(invalid("alpha/beta", "gains must be finite"));
        }
        if alpha < 0.0 {
            return Err(invalid("alpha", format!("{alpha} < 0")));
        }
        if alpha == 0.0 && beta != 0.0 {
            return Err(invalid("beta", "α = 0 is only allowed with β = 0"));
        }
        Ok(Self { alpha, beta })
    }

    /// True when both gains vanish: the boundary is energy-conserving.
    pub fn is_conservative(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }

    pub fn is_feasible(&self, d: f64) -> Result<bool> {
        check_gain_feasibility(self.alpha, self.beta, d)
    }
}

/// `(2α−|β|)(1−d) > |β|`, strictly. Ties are infeasible.
pub fn check_gain_feasibility(alpha: f64, beta: f64, d: f64) -> Result<bool> {
    check_d(d)?;
    let b = beta.abs();
    Ok((2.0 * alpha - b) * (1.0 - d) > b)
}

/// `(|β|/2)(2−d)/(1−d)`: feasibility holds iff α exceeds this value.
pub fn alpha_lower_bound(beta: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    Ok(0.5 * beta.abs() * (2.0 - d) / (1.0 - d))
}

/// Shape of the delay `τ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayKind {
    Constant {
        value: f64,
    },
    /// `τ(t) = mean + amplitude·sin(frequency·t + phase)`.
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Piecewise-linear interpolation of `(times, values)`, held constant
    /// past the last sample.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

/// A delay `τ(t)` together with its declared bounds `τ ≤ M`, `τ̇ ≤ d < 1`.
///
/// The declared bounds are inputs, not inferred: [`validate_delay_profile`]
/// checks them by sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    kind: DelayKind,
    m: f64,
    d: f64,
}

impl DelayProfile {
    pub fn new(kind: DelayKind, m: f64, d: f64) -> Result<Self> {
        check_d(d)?;
        if !(m > 0.0) {
            return Err(invalid("M", format!("{m} must be positive")));
        }
        match &kind {
            DelayKind::Constant { value } => {
                if !(*value > 0.0) {
                    return Err(invalid("tau0", format!("{value} must be positive")));
                }
            }
            DelayKind::Sinusoidal {
                mean,
                amplitude,
                frequency,
                phase,
            } => {
                if !(mean - amplitude.abs() > 0.0) {
                    return Err(invalid(
                        "amplitude",
                        format!(
                            "mean − |amplitude| = {} must be positive",
                            mean - amplitude.abs()
                        ),
                    ));
                }
                if !frequency.is_finite() || !phase.is_finite() {
                    return Err(invalid("frequency", "must be finite"));
                }
            }
            DelayKind::Tabulated { times, values } => check_table(times, values)?,
        }
        Ok(Self { kind, m, d })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(DelayKind::Constant { value }, value, 0.0)
    }

    pub fn kind(&self) -> &DelayKind {
        &self.kind
    }

    /// Declared upper bound `M` on τ.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// Declared upper bound `d` on τ̇.
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn tau0(&self) -> f64 {
        self.tau(0.0)
    }

    pub fn tau(&self, t: f64) -> f64 {
        match &self.kind {
            DelayKind::Constant { value } => *value,
            DelayKind::Sinusoidal {
                mean,
                amplitude,
                frequency,
                phase,
            } => mean + amplitude * (frequency * t + phase).sin(),
            DelayKind::Tabulated { times, values } => {
                let (k, s) = locate(times, t);
                values[k] + s * (values[k + 1] - values[k])
            }
        }
    }

    pub fn tau_dot(&self, t: f64) -> f64 {
        match &self.kind {
            DelayKind::Constant { .. } => 0.0,
            DelayKind::Sinusoidal {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * frequency * (frequency * t + phase).cos(),
            DelayKind::Tabulated { times, values } => {
                if t >= *times.last().unwrap() {
                    return 0.0;
                }
                let (k, _) = locate(times, t);
                (values[k + 1] - values[k]) / (times[k + 1] - times[k])
            }
        }
    }
}

fn check_table(times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::DelayTable(format!(
            "{} times but {} values",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::DelayTable("need at least two samples".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::DelayTable(format!(
            "first time is {}, expected 0",
            times[0]
        )));
    }
    if let Some(w) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::DelayTable(format!(
            "time column not strictly increasing at row {}",
            w + 1
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DelayTable(format!("nonpositive delay value {v}")));
    }
    Ok(())
}

// Segment index and local fraction for piecewise-linear interpolation.
fn locate(times: &[f64], t: f64) -> (usize, f64) {
    let n = times.len();
    if t <= times[0] {
        return (0, 0.0);
    }
    if t >= times[n - 1] {
        return (n - 2, 1.0);
    }
    let k = times.partition_point(|&x| x <= t) - 1;
    (k, (t - times[k]) / (times[k + 1] - times[k]))
}

/// Outcome of sampling a [`DelayProfile`] against its declared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayValidation {
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_dot_max: f64,
    /// Largest `τ(0) − τ(t)` seen (positive means τ dipped below τ(0)).
    pub below_tau0: f64,
    /// Largest `τ(t) − M` seen.
    pub above_m: f64,
    /// Largest `τ̇(t) − d` seen.
    pub tau_dot_excess: f64,
    /// Finite-difference estimate of `sup|τ̈|` (tabulated profiles only).
    pub tau_ddot_max: Option<f64>,
    pub passed: bool,
}

/// Samples τ and τ̇ on a uniform grid over `[0, horizon]` and reports the
/// worst violation of `0 < τ(0) ≤ τ(t) ≤ M`, `τ̇(t) ≤ d < 1`.
pub fn validate_delay_profile(
    profile: &DelayProfile,
    horizon: f64,
    samples: usize,
) -> Result<DelayValidation> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon", format!("{horizon} must be positive")));
    }
    if samples < 2 {
        return Err(invalid("samples", "need at least 2"));
    }
    let tau0 = profile.tau0();
    let mut times: Vec<f64> = (0..samples)
        .map(|k| horizon * k as f64 / (samples - 1) as f64)
        .collect();
    let mut tau_dot_max = f64::NEG_INFINITY;
    // Table breakpoints carry the extremes of a piecewise-linear profile.
    let tau_ddot_max = if let DelayKind::Tabulated { times: tt, values } = profile.kind() {
        let slopes: Vec<f64> = tt
            .windows(2)
            .zip(values.windows(2))
            .map(|(t, v)| (v[1] - v[0]) / (t[1] - t[0]))
            .collect();
        for (k, s) in slopes.iter().enumerate() {
            if tt[k] < horizon {
                tau_dot_max = tau_dot_max.max(*s);
            }
        }
        times.extend(tt.iter().filter(|&&t| t <= horizon));
        let curv = slopes
            .windows(2)
            .zip(tt.windows(3))
            .map(|(s, t)| ((s[1] - s[0]) / (0.5 * (t[2] - t[0]))).abs())
            .fold(0.0, f64::max);
        Some(curv)
    } else {
        None
    };
    let mut tau_min = f64::INFINITY;
    let mut tau_max = f64::NEG_INFINITY;
    for &t in &times {
        let tau = profile.tau(t);
        tau_min = tau_min.min(tau);
        tau_max = tau_max.max(tau);
        tau_dot_max = tau_dot_max.max(profile.tau_dot(t));
    }
    let below_tau0 = tau0 - tau_min;
    let above_m = tau_max - profile.m();
    let tau_dot_excess = tau_dot_max - profile.d();
    let passed = tau0 > 0.0 && below_tau0 <= 0.0 && above_m <= 0.0 && tau_dot_excess <= 0.0;
    Ok(DelayValidation {
        tau0,
        tau_min,
        tau_max,
        tau_dot_max,
        below_tau0,
        above_m,
        tau_dot_excess,
        tau_ddot_max,
        passed,
    })
}

/// Spatial domain `(0, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainConfig {
    pub l: f64,
    /// `L < √3π`: the decay certificate applies.
    pub certified: bool,
}

impl DomainConfig {
    pub fn new(l: f64) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(invalid("L", format!("{l} must be positive")));
        }
        Ok(Self {
            l,
            certified: l < 3f64.sqrt() * PI,
        })
    }
}

/// Whether `L` is within `tol` of a critical length
/// `(2π/√3)·√(k² + kl + l²)` with `1 ≤ k, l ≤ k_max`.
pub fn is_critical_length(l: f64, k_max: usize, tol: f64) -> Result<bool> {
    if !(l > 0.0) {
        return Err(invalid("L", format!("{l} must be positive")));
    }
    if k_max < 1 {
        return Err(invalid("k_max", "must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let scale = 2.0 * PI / 3f64.sqrt();
    for k in 1..=k_max {
        for j in 1..=k {
            let (kf, jf) = (k as f64, j as f64);
            let c = scale * (kf * kf + kf * jf + jf * jf).sqrt();
            if (l - c).abs() <= tol {
                return Ok(true);
            }
        }
        // Pairs with larger index k' exceed scale·k'.
        if scale * (k + 1) as f64 > l + tol {
            break;
        }
    }
    Ok(false)
}
