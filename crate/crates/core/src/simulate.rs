//! Time integration of the KdV–KdV system with the delayed boundary law.
//!
//! Unknowns are the interior values of η and ω, interleaved as
//! `(η₁, ω₁, η₂, ω₂, …)` so the coupled operator has bandwidth 5. Each step
//! solves
//!
//! ```text
//! (I − θ dt A) Uⁿ⁺¹ = (I + (1−θ) dt A) Uⁿ + dt·β·b̄·c  [+ nonlinear terms]
//! ```
//!
//! where `A` carries the dispersive operators and the damping `−α η_x(L)`,
//! `c` injects the boundary load into the last η row, and `b̄` is the delayed
//! trace averaged over the step. The damping is implicit, so the matrix is
//! constant and factored once.

use std::collections::VecDeque;

use crate::analyze;
use crate::discretize::{
    d1_interior, d3_operator, scheme_trace, BandedLu, BandedMatrix, RhoGrid, SpaceGrid, ETA_BC,
    OMEGA_BC,
};
use crate::error::{invalid, Error, Result};
use crate::model::{DelayProfile, GainConfig};

/// How the delayed trace `η_x(t−τ(t), L)` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayChannel {
    /// Transport equation `τ z_t + (1 − τ̇ρ) z_ρ = 0` on the ρ-grid.
    #[default]
    Transport,
    /// Interpolation in a buffer of past traces.
    History,
}

impl DelayChannel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Transport => "transport",
            Self::History => "history",
        }
    }
}

impl std::str::FromStr for DelayChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transport" => Ok(Self::Transport),
            "history" => Ok(Self::History),
            other => Err(invalid(
                "channel",
                format!("unknown delay channel `{other}`"),
            )),
        }
    }
}

/// Time-stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    /// Implicitness weight in `[1/2, 1]`.
    pub theta: f64,
    pub dt: f64,
    pub horizon: f64,
    pub channel: DelayChannel,
    pub nonlinear: bool,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Record every k-th step (1 keeps every step, which the per-step
    /// analyses require).
    pub record_every: usize,
    /// Store a full state every k-th step (0 disables snapshots).
    pub snapshot_every: usize,
}

impl SchemeConfig {
    /// `dt = min(h/4, 0.01)`.
    pub fn default_dt(grid: &SpaceGrid) -> f64 {
        (0.25 * grid.h).min(0.01)
    }

    pub fn new(theta: f64, dt: f64, horizon: f64) -> Result<Self> {
        let s = Self {
            theta,
            dt,
            horizon,
            channel: DelayChannel::Transport,
            nonlinear: false,
            picard_tol: 1e-10,
            picard_max_iters: 20,
            record_every: 1,
            snapshot_every: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(invalid("theta", format!("{} outside [0.5, 1]", self.theta)));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", format!("{} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("{} must be positive", self.horizon),
            ));
        }
        if self.picard_max_iters < 1 {
            return Err(invalid("picard_max_iters", "must be at least 1"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(invalid("picard_tol", "must be positive"));
        }
        if self.record_every < 1 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Initial profile families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    Zero,
    /// `η₀ = a[r·sin(πr) − (π/5)(r² − r⁴)]` with `r = x/L`, and
    /// `ω₀ = a[sin(2πr) + k·sin(πr)]` with `k` chosen so `ω₀` satisfies the
    /// feedback law at `x = L`.
    Sine,
    /// `η₀ = a·exp(4 − 1/(r(1−r)))` with `r = x/L`, `ω₀ = 0`: every boundary
    /// derivative vanishes.
    Bump,
}

impl std::str::FromStr for IcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "sine" => Ok(Self::Sine),
            "bump" => Ok(Self::Bump),
            other => Err(invalid(
                "ic.kind",
                format!("unknown initial condition `{other}`"),
            )),
        }
    }
}

/// Initial history `z₀` on `[−τ(0), 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialHistory {
    #[default]
    Zero,
    /// Constant, equal to the discrete `η_x(0, L)`: no jump at ρ = 0.
    Trace,
}

impl std::str::FromStr for InitialHistory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "trace" => Ok(Self::Trace),
            other => Err(invalid(
                "ic.history",
                format!("unknown initial history `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub kind: IcKind,
    pub amplitude: f64,
    pub history: InitialHistory,
}

/// Discrete state: nodal η and ω on the x-grid (boundary nodes included)
/// and the delay variable z on the ρ-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub eta: Vec<f64>,
    pub omega: Vec<f64>,
    pub z: Vec<f64>,
}

impl SystemState {
    pub fn zeros(grid: &SpaceGrid, rho: &RhoGrid) -> Self {
        Self {
            t: 0.0,
            eta: vec![0.0; grid.nx + 1],
            omega: vec![0.0; grid.nx + 1],
            z: vec![0.0; rho.nrho + 1],
        }
    }
}

/// Output of [`initial_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub state: SystemState,
    /// The constant initial history `z₀`.
    pub history: f64,
    /// True when nonzero boundary values had to be zeroed.
    pub projected: bool,
}

/// Builds the state at `t = 0` with `z(0, ρ) = z₀(−τ(0)ρ)` and
/// `z(0, 0)` equal to the discrete `η_x(0, L)`.
pub fn initial_state(
    ic: &InitialCondition,
    grid: &SpaceGrid,
    rho: &RhoGrid,
    gains: &GainConfig,
) -> Result<InitialData> {
    use std::f64::consts::PI;
    let (l, a) = (grid.l, ic.amplitude);
    if !a.is_finite() {
        return Err(invalid("ic.amplitude", "must be finite"));
    }
    let x = grid.nodes();
    let mut state = SystemState::zeros(grid, rho);
    match ic.kind {
        IcKind::Zero => {}
        IcKind::Sine => {
            let s = match ic.history {
                InitialHistory::Zero => 0.0,
                InitialHistory::Trace => 1.0,
            };
            // η₀ also satisfies η''(L) = 0 and η'''(0) = 0, the closures the
            // ghost nodes impose, so the scheme starts without a boundary layer.
            // Its trace is -3πa/(5L); k makes ω₀ match the feedback law.
            let k = 2.0 - 0.6 * (gains.alpha - gains.beta * s);
            for (i, &xi) in x.iter().enumerate() {
                let p = PI * xi / l;
                let r = xi / l;
                state.eta[i] = a * (r * p.sin() - PI / 5.0 * (r * r - r.powi(4)));
                state.omega[i] = a * ((2.0 * p).sin() + k * p.sin());
            }
        }
        IcKind::Bump => {
            for (i, &xi) in x.iter().enumerate() {
                let r = xi / l;
                if r > 0.0 && r < 1.0 {
                    state.eta[i] = a * (4.0 - 1.0 / (r * (1.0 - r))).exp();
                }
            }
        }
    }
    let n = grid.nx;
    let edge = [state.eta[0], state.eta[n], state.omega[0], state.omega[n]]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let projected = edge > 1e-12 * a.abs().max(f64::MIN_POSITIVE);
    for f in [&mut state.eta, &mut state.omega] {
        f[0] = 0.0;
        f[n] = 0.0;
    }
    let trace = scheme_trace(&state.eta, grid);
    let history = match ic.history {
        InitialHistory::Zero => 0.0,
        InitialHistory::Trace => trace,
    };
    if gains.beta != 0.0 {
        state.z.iter_mut().for_each(|z| *z = history);
    }
    state.z[0] = trace;
    Ok(InitialData {
        state,
        history,
        projected,
    })
}

/// Result of one [`step_transport`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportStep {
    pub substeps: usize,
    /// Trapezoid-rule mean of `z(·, 1)` over the step.
    pub outflow_mean: f64,
}

/// Substep cap for [`step_transport`].
pub const MAX_SUBSTEPS: usize = 1 << 16;

/// Advances `z` over `[t0, t0+dt]` with first-order upwinding,
/// sub-cycling so every substep has Courant number ≤ 1. The inflow
/// `z(·, 0) = inflow` is held over the step.
pub fn step_transport(
    z: &mut [f64],
    profile: &DelayProfile,
    t0: f64,
    dt: f64,
    inflow: f64,
) -> Result<TransportStep> {
    let nrho = z.len() - 1;
    let drho = 1.0 / nrho as f64;
    let courant =
        |t: f64, tau_dot: f64, sub: f64| sub * (1.0 - tau_dot.min(0.0)) / (profile.tau(t) * drho);
    let estimate = [t0, t0 + 0.5 * dt, t0 + dt]
        .iter()
        .map(|&t| courant(t, profile.tau_dot(t), dt))
        .fold(0.0, f64::max);
    let mut m = (estimate * (1.0 + 1e-12)).ceil().max(1.0) as usize;
    let start = z.to_vec();
    'retry: loop {
        if m > MAX_SUBSTEPS {
            return Err(Error::Cfl {
                courant: estimate / MAX_SUBSTEPS as f64,
                substeps: MAX_SUBSTEPS,
            });
        }
        z.copy_from_slice(&start);
        z[0] = inflow;
        let sub = dt / m as f64;
        let mut sum = 0.5 * z[nrho];
        for s in 0..m {
            let ts = t0 + (s as f64 + 0.5) * sub;
            let (tau, tau_dot) = (profile.tau(ts), profile.tau_dot(ts));
            if courant(ts, tau_dot, sub) > 1.0 {
                m *= 2;
                continue 'retry;
            }
            let k = sub / (tau * drho);
            for j in (1..=nrho).rev() {
                let c = k * (1.0 - tau_dot * j as f64 * drho);
                z[j] -= c * (z[j] - z[j - 1]);
            }
            sum += if s + 1 == m { 0.5 * z[nrho] } else { z[nrho] };
        }
        return Ok(TransportStep {
            substeps: m,
            outflow_mean: sum / m as f64,
        });
    }
}

/// Past values of the boundary trace with cubic Lagrange interpolation.
///
/// Times at or before 0 are answered from the initial history `z₀`.
pub struct HistoryBuffer {
    times: VecDeque<f64>,
    values: VecDeque<f64>,
    initial: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for HistoryBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HistoryBuffer")
            .field("len", &self.times.len())
            .field("start", &self.times.front())
            .field("end", &self.times.back())
            .finish()
    }
}

impl HistoryBuffer {
    pub fn new(initial: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            times: VecDeque::new(),
            values: VecDeque::new(),
            initial: Box::new(initial),
        }
    }

    /// Appends a sample; times must increase strictly.
    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if let Some(&last) = self.times.back() {
            if !(t > last) {
                return Err(invalid("t", format!("history time {t} not after {last}")));
            }
        }
        self.times.push_back(t);
        self.values.push_back(value);
        Ok(())
    }

    /// Removes the newest sample.
    pub fn pop(&mut self) -> Option<(f64, f64)> {
        Some((self.times.pop_back()?, self.values.pop_back()?))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time span covered by stored samples.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((*self.times.front()?, *self.times.back()?))
    }

    /// Drops samples no interpolation at or after `oldest` can need.
    pub fn prune_before(&mut self, oldest: f64) {
        while self.times.len() > 4 && self.times[2] < oldest {
            self.times.pop_front();
            self.values.pop_front();
        }
    }

    /// Trace at time `s`: `z₀(s)` for `s ≤ 0`, otherwise cubic Lagrange
    /// through the four samples nearest `s` (extrapolating past the last).
    pub fn value_at(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok((self.initial)(s));
        }
        let n = self.times.len();
        if n == 0 {
            return Err(Error::InsufficientHistory {
                lookback: s,
                start: 0.0,
            });
        }
        if s < self.times[0] && self.times[0] > 0.0 {
            return Err(Error::InsufficientHistory {
                lookback: s,
                start: self.times[0],
            });
        }
        if n < 4 {
            // Linear in the last two samples (or constant).
            let k = n - 1;
            if n == 1 {
                return Ok(self.values[k]);
            }
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            let w = (s - t0) / (t1 - t0);
            return Ok(self.values[k - 1] + w * (self.values[k] - self.values[k - 1]));
        }
        let i = self.times.partition_point(|&t| t < s);
        let lo = i.saturating_sub(2).min(n - 4);
        let mut v = 0.0;
        for p in lo..lo + 4 {
            let mut w = 1.0;
            for q in lo..lo + 4 {
                if q != p {
                    w *= (s - self.times[q]) / (self.times[p] - self.times[q]);
                }
            }
            v += w * self.values[p];
        }
        Ok(v)
    }
}

/// Returns `η_x(t−τ(t), L)`: the last ρ-node of the transport variable, or
/// the history buffer interpolated at `t − τ(t)`.
pub fn delayed_trace(
    channel: DelayChannel,
    t: f64,
    profile: &DelayProfile,
    z: &[f64],
    history: &HistoryBuffer,
) -> Result<f64> {
    match channel {
        DelayChannel::Transport => Ok(z[z.len() - 1]),
        DelayChannel::History => history.value_at(t - profile.tau(t)),
    }
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub grid: SpaceGrid,
    pub rho: RhoGrid,
    pub gains: GainConfig,
    pub profile: DelayProfile,
    pub scheme: SchemeConfig,
    pub ic: InitialCondition,
}

/// Lyapunov weights `(μ₁, μ₂)` used when recording `V(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovWeights {
    pub mu1: f64,
    pub mu2: f64,
}

/// Boundary data of one step, taken at `tⁿ + θ dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    /// θ-weighted boundary trace `η_x(L)`.
    pub a: f64,
    /// Delayed trace averaged over the step.
    pub b: f64,
    pub tau_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PicardStats {
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub steps: usize,
}

impl PicardStats {
    pub fn mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.steps as f64
        }
    }
}

/// Run parameters stored alongside the series.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub l: f64,
    pub nx: usize,
    pub nrho: usize,
    pub dt: f64,
    pub theta: f64,
    pub channel: DelayChannel,
    pub nonlinear: bool,
    pub alpha: f64,
    pub beta: f64,
    pub weights: LyapunovWeights,
    /// False when β = 0 (no delay term at all).
    pub delay_channel: bool,
    /// α = β = 0.
    pub conservative: bool,
    pub projected_ic: bool,
    /// `‖(η₀, ω₀)‖²` in L²×L².
    pub initial_norm_sq: f64,
    /// `‖z(0, ·)‖²` in L²(0, 1).
    pub initial_history_norm_sq: f64,
    pub picard: Option<PicardStats>,
    pub max_substeps: usize,
    pub correctors: usize,
}

/// Time series of a run. All series share the time axis `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub lyapunov: Vec<f64>,
    /// Scheme boundary trace `η_x(t, L)`.
    pub eta_x_l: Vec<f64>,
    /// Delayed trace `z(t, 1)`.
    pub z1: Vec<f64>,
    /// `∫(η_x² + ω_x²) dx`.
    pub gradient_sq: Vec<f64>,
    /// Per-step boundary data (present when every step is recorded).
    pub steps: Vec<StepTrace>,
    pub snapshots: Vec<SystemState>,
    pub meta: RecordMeta,
}

enum Channel {
    Off,
    Transport { z: Vec<f64> },
    History { buf: HistoryBuffer },
}

/// A running simulation. [`Simulation::step`] advances one time step.
pub struct Simulation {
    setup: Setup,
    explicit: BandedMatrix,
    lu: BandedLu,
    /// Interleaved index of η at node nx−1, where the boundary load enters.
    load_row: usize,
    u: Vec<f64>,
    channel: Channel,
    step: usize,
    a_now: f64,
    delayed_now: f64,
    initial_history: f64,
    projected: bool,
    picard: PicardStats,
    max_substeps: usize,
    correctors: usize,
    rhs: Vec<f64>,
}

/// The interleaved operator `A` of the semi-discrete system, with the
/// damping `−α η_x(L)` folded into the last η row.
pub fn system_operator(grid: &SpaceGrid, alpha: f64) -> Result<BandedMatrix> {
    let n = grid.interior();
    let k1 = d1_interior(grid);
    let d3_eta = d3_operator(grid, &ETA_BC)?;
    let d3_omega = d3_operator(grid, &OMEGA_BC)?;
    let mut a = BandedMatrix::zeros(2 * n, 5, 5);
    for i in 0..n {
        for j in i.saturating_sub(2)..(i + 3).min(n) {
            // η_t = −ω_x − ω_xxx, ω_t = −η_x − η_xxx
            let e = -(k1.get(i, j) + d3_omega.op.get(i, j));
            let w = -(k1.get(i, j) + d3_eta.op.get(i, j));
            if e != 0.0 {
                a.set(2 * i, 2 * j + 1, e);
            }
            if w != 0.0 {
                a.set(2 * i + 1, 2 * j, w);
            }
        }
    }
    // Load −g/h² in the last η row with g = −α a, a = −η_{nx−1}/h.
    let (_, c) = d3_omega.load.expect("ω-set carries a load");
    let h = grid.h;
    a.add(2 * (n - 1), 2 * (n - 1), -c * alpha / h);
    Ok(a)
}

impl Simulation {
    pub fn new(setup: &Setup) -> Result<Self> {
        setup.scheme.validate()?;
        let grid = setup.grid;
        let n = grid.interior();
        let (theta, dt) = (setup.scheme.theta, setup.scheme.dt);
        let a = system_operator(&grid, setup.gains.alpha)?;
        let identity = BandedMatrix::identity(2 * n, 5, 5);
        let implicit = identity.add_scaled(-theta * dt, &a);
        let explicit = identity.add_scaled((1.0 - theta) * dt, &a);
        let lu = implicit
            .lu()
            .map_err(|row| Error::SingularSystem { row, dt, h: grid.h })?;

        let init = initial_state(&setup.ic, &grid, &setup.rho, &setup.gains)?;
        let mut u = vec![0.0; 2 * n];
        for i in 0..n {
            u[2 * i] = init.state.eta[i + 1];
            u[2 * i + 1] = init.state.omega[i + 1];
        }
        let z0 = init.history;
        let channel = if setup.gains.beta == 0.0 {
            Channel::Off
        } else {
            match setup.scheme.channel {
                DelayChannel::Transport => Channel::Transport {
                    z: init.state.z.clone(),
                },
                DelayChannel::History => {
                    let mut buf = HistoryBuffer::new(move |_| z0);
                    // Pre-zero samples keep stencils near s = 0 centered.
                    for k in (1..=3).rev() {
                        buf.push((theta - k as f64) * dt, z0)?;
                    }
                    Channel::History { buf }
                }
            }
        };
        Ok(Self {
            setup: setup.clone(),
            explicit,
            lu,
            load_row: 2 * (n - 1),
            u,
            channel,
            step: 0,
            a_now: init.state.z[0],
            delayed_now: if setup.gains.beta == 0.0 { 0.0 } else { z0 },
            initial_history: z0,
            projected: init.projected,
            picard: PicardStats::default(),
            max_substeps: 0,
            correctors: 0,
            rhs: vec![0.0; 2 * n],
        })
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.setup.scheme.dt
    }

    /// Scheme trace `η_x(t, L)` at the current time.
    pub fn trace(&self) -> f64 {
        self.a_now
    }

    /// Delayed trace at the current time.
    pub fn delayed(&self) -> f64 {
        self.delayed_now
    }

    pub fn picard_stats(&self) -> PicardStats {
        self.picard
    }

    fn trace_of(&self, u: &[f64]) -> f64 {
        -u[self.load_row] / self.setup.grid.h
    }

    /// The current state. For the history channel `z` is reconstructed by
    /// interpolation: `z(t, ρ) = η_x(t − τ(t)ρ, L)`.
    pub fn state(&self) -> Result<SystemState> {
        let (grid, rho) = (&self.setup.grid, &self.setup.rho);
        let mut s = SystemState::zeros(grid, rho);
        s.t = self.time();
        for i in 0..grid.interior() {
            s.eta[i + 1] = self.u[2 * i];
            s.omega[i + 1] = self.u[2 * i + 1];
        }
        s.z = self.z_field()?;
        Ok(s)
    }

    fn z_field(&self) -> Result<Vec<f64>> {
        let rho = &self.setup.rho;
        match &self.channel {
            Channel::Off => {
                let mut z = vec![0.0; rho.nrho + 1];
                z[0] = self.a_now;
                Ok(z)
            }
            Channel::Transport { z } => Ok(z.clone()),
            Channel::History { buf } => {
                let t = self.time();
                let tau = self.setup.profile.tau(t);
                let mut z = Vec::with_capacity(rho.nrho + 1);
                z.push(self.a_now);
                for j in 1..=rho.nrho {
                    z.push(buf.value_at(t - tau * rho.rho(j))?);
                }
                Ok(z)
            }
        }
    }

    // Delayed trace averaged over [t0, t0+dt], given the inflow over the step.
    fn outflow(&self, t0: f64, inflow: f64) -> Result<(f64, Option<(Vec<f64>, usize)>)> {
        let dt = self.setup.scheme.dt;
        let p = &self.setup.profile;
        match &self.channel {
            Channel::Off => Ok((0.0, None)),
            Channel::Transport { z } => {
                let mut next = z.clone();
                let st = step_transport(&mut next, p, t0, dt, inflow)?;
                Ok((st.outflow_mean, Some((next, st.substeps))))
            }
            Channel::History { buf } => {
                let t1 = t0 + dt;
                let b = 0.5 * (buf.value_at(t0 - p.tau(t0))? + buf.value_at(t1 - p.tau(t1))?);
                Ok((b, None))
            }
        }
    }

    // Nonlinear terms −(ηω)_x and −½(ω²)_x by centered differences.
    fn nonlinear_terms(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len() / 2;
        let c = 0.5 / self.setup.grid.h;
        let eta = |i: usize| if i == 0 || i > n { 0.0 } else { u[2 * (i - 1)] };
        let om = |i: usize| {
            if i == 0 || i > n {
                0.0
            } else {
                u[2 * (i - 1) + 1]
            }
        };
        for i in 1..=n {
            let p = eta(i + 1) * om(i + 1) - eta(i - 1) * om(i - 1);
            let q = 0.5 * (om(i + 1).powi(2) - om(i - 1).powi(2));
            out[2 * (i - 1)] = -c * p;
            out[2 * (i - 1) + 1] = -c * q;
        }
    }

    // Solves for Uⁿ⁺¹ given the averaged delayed trace; returns Picard
    // iterations (0 for the linear solve).
    fn solve(&mut self, u_old: &[f64], b: f64) -> Result<(Vec<f64>, usize)> {
        let s = &self.setup.scheme;
        let (dt, theta) = (s.dt, s.theta);
        let h = self.setup.grid.h;
        self.explicit.apply_into(u_old, &mut self.rhs);
        self.rhs[self.load_row] += -dt * self.setup.gains.beta * b / (h * h);
        if !s.nonlinear {
            let mut x = self.rhs.clone();
            self.lu.solve_in_place(&mut x);
            return Ok((x, 0));
        }
        let mut base = self.rhs.clone();
        let mut nl = vec![0.0; u_old.len()];
        self.nonlinear_terms(u_old, &mut nl);
        for (r, v) in base.iter_mut().zip(&nl) {
            *r += dt * (1.0 - theta) * v;
        }
        let mut x = u_old.to_vec();
        let mut last = f64::INFINITY;
        for it in 1..=s.picard_max_iters {
            self.nonlinear_terms(&x, &mut nl);
            let mut next: Vec<f64> = base
                .iter()
                .zip(&nl)
                .map(|(r, v)| r + dt * theta * v)
                .collect();
            self.lu.solve_in_place(&mut next);
            let diff = next
                .iter()
                .zip(&x)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let size = next.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            x = next;
            last = diff;
            if diff <= s.picard_tol * size {
                return Ok((x, it));
            }
        }
        Err(Error::PicardDivergence {
            t: self.time(),
            iterations: s.picard_max_iters,
            increment: last,
        })
    }

    /// Advances one step with the linear or nonlinear solver, per the scheme.
    pub fn step(&mut self) -> Result<StepTrace> {
        if self.setup.scheme.nonlinear {
            self.step_nonlinear()
        } else {
            self.step_linear()
        }
    }

    /// One θ-scheme step of the linearized system.
    pub fn step_linear(&mut self) -> Result<StepTrace> {
        self.advance(false)
    }

    /// One θ-scheme step with Picard iteration on `(ηω)_x` and `ωω_x`.
    pub fn step_nonlinear(&mut self) -> Result<StepTrace> {
        self.advance(true)
    }

    fn advance(&mut self, nonlinear: bool) -> Result<StepTrace> {
        let saved = self.setup.scheme.nonlinear;
        self.setup.scheme.nonlinear = nonlinear;
        let out = self.advance_inner();
        self.setup.scheme.nonlinear = saved;
        out
    }

    fn advance_inner(&mut self) -> Result<StepTrace> {
        let (dt, theta) = (self.setup.scheme.dt, self.setup.scheme.theta);
        let t0 = self.time();
        let t1 = (self.step + 1) as f64 * dt;
        let a0 = self.a_now;
        let u_old = self.u.clone();

        // Predictor: the delayed trace over the step from the old inflow.
        // When the transport does not reach ρ = 1 within one step (the
        // usual case) this is already exact and the corrector is skipped.
        let (b_pred, _) = self.outflow(t0, a0)?;
        let (mut u_new, mut iters) = self.solve(&u_old, b_pred)?;
        let mut a1 = self.trace_of(&u_new);
        let mut a_theta = theta * a1 + (1.0 - theta) * a0;
        let mut b = b_pred;
        let mut commit = self.commit_channel(t0, a_theta)?;
        if commit.0 != b_pred {
            self.correctors += 1;
            self.uncommit_channel();
            b = commit.0;
            let (u2, it2) = self.solve(&u_old, b)?;
            u_new = u2;
            iters = iters.max(it2);
            a1 = self.trace_of(&u_new);
            a_theta = theta * a1 + (1.0 - theta) * a0;
            commit = self.commit_channel(t0, a_theta)?;
        }
        if let Some((z, m)) = commit.1 {
            self.max_substeps = self.max_substeps.max(m);
            if let Channel::Transport { z: zc } = &mut self.channel {
                *zc = z;
                zc[0] = a1;
            }
        }
        if self.setup.scheme.nonlinear {
            self.picard.max_iterations = self.picard.max_iterations.max(iters);
            self.picard.total_iterations += iters;
            self.picard.steps += 1;
        }
        self.u = u_new;
        self.step += 1;
        self.a_now = a1;
        self.delayed_now = match &self.channel {
            Channel::Off => 0.0,
            Channel::Transport { z } => z[z.len() - 1],
            Channel::History { buf } => buf.value_at(t1 - self.setup.profile.tau(t1))?,
        };
        if let Channel::History { buf } = &mut self.channel {
            buf.prune_before(t1 - self.setup.profile.m() - 4.0 * dt);
        }
        Ok(StepTrace {
            a: a_theta,
            b,
            tau_dot: self.setup.profile.tau_dot(t0 + theta * dt),
        })
    }

    // Feeds the new inflow to the channel. Returns the outflow mean the
    // channel now reports for this step and, for transport, the new field.
    fn commit_channel(
        &mut self,
        t0: f64,
        a_theta: f64,
    ) -> Result<(f64, Option<(Vec<f64>, usize)>)> {
        let theta = self.setup.scheme.theta;
        let dt = self.setup.scheme.dt;
        if let Channel::History { buf } = &mut self.channel {
            buf.push(t0 + theta * dt, a_theta)?;
        }
        self.outflow(t0, a_theta)
    }

    fn uncommit_channel(&mut self) {
        if let Channel::History { buf } = &mut self.channel {
            buf.pop();
        }
    }

    /// Energy at the current time (fast path of [`analyze::energy`]).
    pub fn energy(&self) -> Result<f64> {
        Ok(self.observe(&LyapunovWeights::default())?[0])
    }

    // [E, V, ∫(η_x²+ω_x²)] at the current time.
    fn observe(&self, w: &LyapunovWeights) -> Result<[f64; 3]> {
        let grid = &self.setup.grid;
        let h = grid.h;
        let n = grid.interior();
        let mut e0 = 0.0;
        let mut v1 = 0.0;
        let mut grad = 0.0;
        let (mut pe, mut pw) = (0.0, 0.0);
        for i in 0..n {
            let (e, o) = (self.u[2 * i], self.u[2 * i + 1]);
            e0 += e * e + o * o;
            v1 += grid.x(i + 1) * e * o;
            grad += (e - pe).powi(2) + (o - pw).powi(2);
            pe = e;
            pw = o;
        }
        grad += pe * pe + pw * pw;
        let e0 = 0.5 * h * e0;
        let v1 = 0.5 * h * v1;
        let grad = grad / h;
        let (ez, v2) = match &self.channel {
            Channel::Off => (0.0, 0.0),
            _ => {
                let z = self.z_field()?;
                let rho = &self.setup.rho;
                let tau = self.setup.profile.tau(self.time());
                let c = 0.5 * self.setup.gains.beta.abs() * tau * rho.drho;
                let (mut s, mut sw) = (0.0, 0.0);
                for (j, zj) in z.iter().enumerate().skip(1) {
                    s += zj * zj;
                    sw += (1.0 - rho.rho(j)) * zj * zj;
                }
                (c * s, c * sw)
            }
        };
        let e = e0 + ez;
        Ok([e, e + w.mu1 * v1 + w.mu2 * v2, grad])
    }

    fn meta(
        &self,
        weights: LyapunovWeights,
        initial_norm_sq: f64,
        initial_history_norm_sq: f64,
    ) -> RecordMeta {
        let s = &self.setup;
        RecordMeta {
            l: s.grid.l,
            nx: s.grid.nx,
            nrho: s.rho.nrho,
            dt: s.scheme.dt,
            theta: s.scheme.theta,
            channel: s.scheme.channel,
            nonlinear: s.scheme.nonlinear,
            alpha: s.gains.alpha,
            beta: s.gains.beta,
            weights,
            delay_channel: s.gains.beta != 0.0,
            conservative: s.gains.is_conservative(),
            projected_ic: self.projected,
            initial_norm_sq,
            initial_history_norm_sq,
            picard: s.scheme.nonlinear.then_some(self.picard),
            max_substeps: self.max_substeps,
            correctors: self.correctors,
        }
    }

    /// The constant initial history `z₀`.
    pub fn initial_history(&self) -> f64 {
        self.initial_history
    }
}

/// Integrates to the horizon and records `E`, `V`, the traces and the
/// gradient norm.
pub fn run_simulation(setup: &Setup, weights: LyapunovWeights) -> Result<SimulationRecord> {
    let mut sim = Simulation::new(setup)?;
    let scheme = setup.scheme;
    let steps = scheme.steps();
    let cap = steps / scheme.record_every + 2;
    let mut rec = SimulationRecord {
        t: Vec::with_capacity(cap),
        energy: Vec::with_capacity(cap),
        lyapunov: Vec::with_capacity(cap),
        eta_x_l: Vec::with_capacity(cap),
        z1: Vec::with_capacity(cap),
        gradient_sq: Vec::with_capacity(cap),
        steps: Vec::with_capacity(if scheme.record_every == 1 { steps } else { 0 }),
        snapshots: Vec::new(),
        meta: sim.meta(weights, 0.0, 0.0),
    };
    let s0 = sim.state()?;
    let initial_norm_sq = 2.0 * analyze::energy(&s0, &setup.grid, 0.0, &setup.profile);
    let initial_history_norm_sq = if setup.gains.beta == 0.0 {
        0.0
    } else {
        setup.rho.drho * s0.z[1..].iter().map(|z| z * z).sum::<f64>()
    };
    let push = |sim: &Simulation, rec: &mut SimulationRecord| -> Result<()> {
        let [e, v, g] = sim.observe(&weights)?;
        rec.t.push(sim.time());
        rec.energy.push(e);
        rec.lyapunov.push(v);
        rec.eta_x_l.push(sim.trace());
        rec.z1.push(sim.delayed());
        rec.gradient_sq.push(g);
        Ok(())
    };
    push(&sim, &mut rec)?;
    if scheme.snapshot_every > 0 {
        rec.snapshots.push(s0);
    }
    for k in 1..=steps {
        let st = sim.step()?;
        if scheme.record_every == 1 {
            rec.steps.push(st);
        }
        if k % scheme.record_every == 0 || k == steps {
            push(&sim, &mut rec)?;
        }
        if scheme.snapshot_every > 0 && k % scheme.snapshot_every == 0 {
            rec.snapshots.push(sim.state()?);
        }
    }
    rec.meta = sim.meta(weights, initial_norm_sq, initial_history_norm_sq);
    Ok(rec)
}

/// Result of [`compare_channels`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelComparison {
    /// `max|z₁ᵀ − z₁ᴴ|` over the run.
    pub trace_sup: f64,
    /// `trace_sup / max|z₁ᴴ|` (0 when the history trace vanishes).
    pub trace_sup_relative: f64,
    /// `max|Eᵀ − Eᴴ| / E(0)` (absolute when `E(0) = 0`).
    pub energy_sup_relative: f64,
    pub transport: SimulationRecord,
    pub history: SimulationRecord,
}

/// Runs twin simulations that differ only in the delay channel.
pub fn compare_channels(setup: &Setup, weights: LyapunovWeights) -> Result<ChannelComparison> {
    let mut s = setup.clone();
    s.scheme.channel = DelayChannel::Transport;
    let transport = run_simulation(&s, weights)?;
    s.scheme.channel = DelayChannel::History;
    let history = run_simulation(&s, weights)?;
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let trace_sup = sup(&transport.z1, &history.z1);
    let scale = history.z1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let e0 = history.energy.first().copied().unwrap_or(0.0);
    let energy_sup = sup(&transport.energy, &history.energy);
    Ok(ChannelComparison {
        trace_sup,
        trace_sup_relative: if scale > 0.0 { trace_sup / scale } else { 0.0 },
        energy_sup_relative: if e0 > 0.0 {
            energy_sup / e0
        } else {
            energy_sup
        },
        transport,
        history,
    })
}
