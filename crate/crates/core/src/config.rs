//! Run configuration: a TOML document with a fixed key set. Unknown keys
//! are errors.
//!
//! ```toml
//! version = 1
//!
//! [domain]
//! L = 5.0
//!
//! [grid]
//! nx = 256
//! nrho = 256
//!
//! [time]
//! horizon = 600.0      # dt defaults to min(h/4, 0.01)
//!
//! [gains]
//! alpha = 1.0
//! beta = 0.5
//!
//! [delay]
//! kind = "sinusoidal"  # constant | sinusoidal | tabulated
//! mean = 2.0
//! amplitude = 0.5
//! frequency = 1.0
//! phase = -1.5707963267948966
//! M = 3.0
//! d = 0.5
//!
//! [scheme]
//! theta = 0.5
//! channel = "transport"  # transport | history
//!
//! [ic]
//! kind = "sine"        # zero | sine | bump
//! amplitude = 1.0
//! history = "trace"    # zero | trace
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{Problem, RateVariant};
use crate::discretize::{RhoGrid, SpaceGrid};
use crate::error::{Error, Result};
use crate::model::{DelayKind, DelayProfile, GainConfig};
use crate::simulate::{InitialCondition, SchemeConfig, Setup};

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "version")]
    pub version: u32,
    #[serde(default)]
    pub domain: DomainSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub delay: DelaySection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub ic: IcSection,
    #[serde(default)]
    pub certificate: CertificateSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    /// Directory that relative paths (`delay.file`) are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(rename = "L")]
    pub l: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { l: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub nrho: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { nx: 256, nrho: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub horizon: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            dt: None,
            horizon: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelaySection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

impl Default for DelaySection {
    /// `τ(t) = 2 − ½cos t`: starts at its minimum 1.5, `τ ≤ 2.5 ≤ M = 3`, `τ̇ ≤ ½ = d`.
    fn default() -> Self {
        Self {
            kind: "sinusoidal".into(),
            tau0: None,
            mean: Some(2.0),
            amplitude: Some(0.5),
            frequency: Some(1.0),
            phase: Some(-std::f64::consts::FRAC_PI_2),
            file: None,
            m: Some(3.0),
            d: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSection {
    pub theta: f64,
    pub channel: String,
    pub nonlinear: bool,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub record_every: usize,
    pub snapshot_every: usize,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            theta: 0.5,
            channel: "transport".into(),
            nonlinear: false,
            picard_tol: 1e-10,
            picard_max_iters: 20,
            record_every: 1,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcSection {
    pub kind: String,
    pub amplitude: f64,
    pub history: String,
}

impl Default for IcSection {
    fn default() -> Self {
        Self {
            kind: "sine".into(),
            amplitude: 1.0,
            history: "zero".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateSection {
    /// Fixed μ₁; the optimizer's μ₁* when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    /// Fixed μ₂; `mu2_of_mu1(μ₁)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
    pub variant: String,
    pub tol: f64,
}

impl Default for CertificateSection {
    fn default() -> Self {
        Self {
            mu1: None,
            mu2: None,
            variant: "proposition".into(),
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub slack: f64,
    pub fit_window: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            slack: 0.05,
            fit_window: 0.5,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            domain: DomainSection::default(),
            grid: GridSection::default(),
            time: TimeSection::default(),
            gains: GainsSection::default(),
            delay: DelaySection::default(),
            scheme: SchemeSection::default(),
            ic: IcSection::default(),
            certificate: CertificateSection::default(),
            analysis: AnalysisSection::default(),
            base_dir: None,
        }
    }
}

/// Named grid presets for `--resolution`.
pub fn resolution_preset(name: &str) -> Result<usize> {
    match name {
        "coarse" => Ok(128),
        "reference" => Ok(256),
        "fine" => Ok(512),
        other => Err(cfg(format!(
            "unknown resolution `{other}` (expected coarse, reference or fine)"
        ))),
    }
}

impl Config {
    /// The Figure-1 experiment: defaults plus an initial history matching
    /// the initial trace.
    pub fn figure_one() -> Self {
        let mut c = Self::default();
        c.ic.history = "trace".into();
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key=value` overrides (dotted keys,
    /// TOML values; bare words are taken as strings).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| cfg(e.to_string().trim_end()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let c: Config = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| cfg(e.to_string().trim_end()))?;
        if c.version != CONFIG_VERSION {
            return Err(cfg(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml_with_overrides(&text, overrides)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    /// Sets both grid sizes from a named preset and resets `dt` to its default.
    pub fn apply_resolution(&mut self, preset: &str) -> Result<()> {
        let n = resolution_preset(preset)?;
        self.grid.nx = n;
        self.grid.nrho = n;
        self.time.dt = None;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        let profile = self.delay_profile()?;
        Ok(Problem {
            alpha: self.gains.alpha,
            beta: self.gains.beta,
            d: profile.d(),
            l: self.domain.l,
            m: profile.m(),
        })
    }

    pub fn variant(&self) -> Result<RateVariant> {
        self.certificate
            .variant
            .parse()
            .map_err(|e: Error| cfg(e.to_string()))
    }

    pub fn delay_profile(&self) -> Result<DelayProfile> {
        let d = &self.delay;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| cfg(format!("delay.{key} is required for kind `{}`", d.kind)))
        };
        match d.kind.as_str() {
            "constant" => {
                let value = need(d.tau0, "tau0")?;
                DelayProfile::new(
                    DelayKind::Constant { value },
                    d.m.unwrap_or(value),
                    d.d.unwrap_or(0.0),
                )
            }
            "sinusoidal" => DelayProfile::new(
                DelayKind::Sinusoidal {
                    mean: need(d.mean, "mean")?,
                    amplitude: need(d.amplitude, "amplitude")?,
                    frequency: need(d.frequency, "frequency")?,
                    phase: d.phase.unwrap_or(0.0),
                },
                need(d.m, "M")?,
                need(d.d, "d")?,
            ),
            "tabulated" => {
                let file = d
                    .file
                    .as_ref()
                    .ok_or_else(|| cfg("delay.file is required for kind `tabulated`"))?;
                let path = match &self.base_dir {
                    Some(dir) => dir.join(file),
                    None => PathBuf::from(file),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| cfg(format!("{}: {e}", path.display())))?;
                let (times, values) = parse_table(&text)?;
                DelayProfile::new(
                    DelayKind::Tabulated { times, values },
                    need(d.m, "M")?,
                    need(d.d, "d")?,
                )
            }
            other => Err(cfg(format!("unknown delay.kind `{other}`"))),
        }
    }

    /// Resolves every section into the simulator's input.
    pub fn setup(&self) -> Result<Setup> {
        let grid = SpaceGrid::new(self.domain.l, self.grid.nx)?;
        let rho = RhoGrid::new(self.grid.nrho)?;
        let gains = GainConfig::new(self.gains.alpha, self.gains.beta)?;
        let profile = self.delay_profile()?;
        let s = &self.scheme;
        let mut scheme = SchemeConfig::new(
            s.theta,
            self.time
                .dt
                .unwrap_or_else(|| SchemeConfig::default_dt(&grid)),
            self.time.horizon,
        )?;
        scheme.channel = s.channel.parse()?;
        scheme.nonlinear = s.nonlinear;
        scheme.picard_tol = s.picard_tol;
        scheme.picard_max_iters = s.picard_max_iters;
        scheme.record_every = s.record_every;
        scheme.snapshot_every = s.snapshot_every;
        scheme.validate()?;
        let ic = InitialCondition {
            kind: self.ic.kind.parse()?,
            amplitude: self.ic.amplitude,
            history: self.ic.history.parse()?,
        };
        Ok(Setup {
            grid,
            rho,
            gains,
            profile,
            scheme,
            ic,
        })
    }

    /// This configuration with every default written out (`time.dt` resolved).
    pub fn materialized(&self) -> Result<Self> {
        let mut c = self.clone();
        let grid = SpaceGrid::new(c.domain.l, c.grid.nx)?;
        c.time.dt.get_or_insert(SchemeConfig::default_dt(&grid));
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses `t τ` pairs, one per line; `#` starts a comment.
pub fn parse_table(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::DelayTable(format!("line {}: {e}", no + 1)))
        };
        match cols.as_slice() {
            [t, v] => {
                times.push(parse(t)?);
                values.push(parse(v)?);
            }
            _ => {
                return Err(Error::DelayTable(format!(
                    "line {}: expected two columns",
                    no + 1
                )))
            }
        }
    }
    Ok((times, values))
}

/// Applies one `a.b=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| cfg(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg(format!("override key `{key}` is malformed")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| cfg(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
