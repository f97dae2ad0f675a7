use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("infeasible gains: (2α−|β|)(1−d) = {lhs} does not exceed |β| = {rhs}")]
    InfeasibleGains { lhs: f64, rhs: f64 },

    #[error("L = {0} outside certified range (0, √3π)")]
    LengthOutOfRange(f64),

    #[error("certificate constraint violated: {0}")]
    Constraint(String),

    #[error("optimizer requires β≠0 (g undefined); use cmd_certify")]
    DegenerateDelayGain,

    #[error("delay table: {0}")]
    DelayTable(String),

    #[error("boundary conditions: {0}")]
    BoundaryConditions(String),

    #[error("grid too coarse: {what} = {got}, need at least {min}")]
    GridTooCoarse {
        what: &'static str,
        got: usize,
        min: usize,
    },

    #[error("singular banded system at row {row} (dt = {dt}, h = {h})")]
    SingularSystem { row: usize, dt: f64, h: f64 },

    #[error("CFL condition violated: Courant number {courant} after {substeps} substeps")]
    Cfl { courant: f64, substeps: usize },

    #[error("lookback time {lookback} precedes the recorded history (starts at {start})")]
    InsufficientHistory { lookback: f64, start: f64 },

    #[error("Picard iteration did not converge at t = {t}: increment {increment} after {iterations} iterations")]
    PicardDivergence {
        t: f64,
        iterations: usize,
        increment: f64,
    },

    #[error("nonpositive energy {value} at t = {t} inside the fit window")]
    NonpositiveEnergy { t: f64, value: f64 },

    #[error("record lacks per-step data: {0}")]
    MissingSnapshots(&'static str),

    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_d(d: f64) -> Result<()> {
    if (0.0..1.0).contains(&d) {
        Ok(())
    } else {
        Err(invalid("d", format!("{d} is outside [0, 1)")))
    }
}
