//! Run configuration: `key = value` files, overrides, validation and model
//! construction.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::morse::{MorseModel, MorseParams, TwoLevelModel};
use crate::propagator::{Scheme, TimeGrid};
use crate::reference::DEFAULT_DT_REF;
use crate::system::OpenSystem;

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Free,
    Driven,
    TwoLevel,
    /// The Morse oscillator with parameters taken from the config keys.
    Custom,
}

impl FromStr for ModelKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "free" => Ok(Self::Free),
            "driven" => Ok(Self::Driven),
            "two-level" => Ok(Self::TwoLevel),
            "custom" => Ok(Self::Custom),
            _ => Err(config_err(format!(
                "unknown model '{s}' (expected free, driven, two-level or custom)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Free => "free",
            Self::Driven => "driven",
            Self::TwoLevel => "two-level",
            Self::Custom => "custom",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Stochastic(Scheme),
    Reference,
}

impl FromStr for Solver {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Ok(match s {
            "order1" => Self::Stochastic(Scheme::Order1),
            "order2" => Self::Stochastic(Scheme::Order2),
            "linear1" => Self::Stochastic(Scheme::Linear1),
            "linear2" => Self::Stochastic(Scheme::Linear2),
            "reference" => Self::Reference,
            _ => {
                return Err(config_err(format!(
                    "unknown solver '{s}' (expected order1, order2, linear1, linear2 or reference)"
                )))
            }
        })
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Stochastic(s) => write!(f, "{s}"),
            Self::Reference => f.write_str("reference"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observable {
    Energy,
    Position,
    Population(usize),
}

impl FromStr for Observable {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "energy" => Ok(Self::Energy),
            "position" => Ok(Self::Position),
            _ => s
                .strip_prefix("population:")
                .and_then(|n| n.parse().ok())
                .map(Self::Population)
                .ok_or_else(|| {
                    config_err(format!(
                        "unknown observable '{s}' (expected energy, position or population:<n>)"
                    ))
                }),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Energy => f.write_str("energy"),
            Self::Position => f.write_str("position"),
            Self::Population(n) => write!(f, "population:{n}"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub solver: Solver,
    pub dt: f64,
    pub t_final: f64,
    /// Macro interval; `None` picks 0.25 when that is a multiple of `dt`,
    /// otherwise `dt`.
    pub tau: Option<f64>,
    pub samples: u64,
    pub seed: u64,
    pub observables: Vec<Observable>,
    pub out: Option<PathBuf>,
    pub dt_ref: f64,
    /// Step sizes for `converge` and `stability`.
    pub dts: Vec<f64>,
    pub morse: MorseParams,
    pub two_level_gamma: f64,
    pub two_level_p_excited: f64,
    /// Whether a custom Morse model carries the drive.
    pub custom_driven: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Free,
            solver: Solver::Stochastic(Scheme::Order2),
            dt: 0.25,
            t_final: 7.0,
            tau: None,
            samples: 1024,
            seed: 1,
            observables: vec![Observable::Energy, Observable::Position],
            out: None,
            dt_ref: DEFAULT_DT_REF,
            dts: vec![0.25, 0.125, 0.0625],
            morse: MorseParams::default(),
            two_level_gamma: 0.2,
            two_level_p_excited: 0.8,
            custom_driven: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| config_err(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr<Err = HarnessError>>(value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// `x / unit` is an integer to within rounding.
fn is_multiple(x: f64, unit: f64) -> bool {
    let r = x / unit;
    (r - r.round()).abs() < 1e-9 * r.abs().max(1.0) && r.round() >= 1.0
}

impl RunConfig {
    /// Known keys, in the order they are documented.
    pub const KEYS: &'static [&'static str] = &[
        "model", "solver", "dt", "t_final", "tau", "samples", "seed", "obs", "out", "dt_ref", "dts",
        "v_inf", "a", "u_max", "mass", "dx", "x0", "n_points", "beta_e", "gamma0", "window",
        "force", "omega", "driven", "gamma", "p_excited",
    ];

    /// Applies one `key = value` setting. Dashes in keys are accepted as
    /// underscores, so CLI flag names can be passed through unchanged.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let m = &mut self.morse;
        match key.as_str() {
            "model" => self.model = value.parse()?,
            "solver" => self.solver = value.parse()?,
            "dt" => self.dt = parse_num(&key, value)?,
            "t_final" => self.t_final = parse_num(&key, value)?,
            "tau" => self.tau = Some(parse_num(&key, value)?),
            "samples" => self.samples = parse_num(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "obs" | "observables" => self.observables = parse_list(value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "dt_ref" => self.dt_ref = parse_num(&key, value)?,
            "dts" => {
                self.dts = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num("dts", s))
                    .collect::<Result<_, _>>()?
            }
            "v_inf" => m.v_inf = parse_num(&key, value)?,
            "a" => m.a = parse_num(&key, value)?,
            "u_max" => m.u_max = parse_num(&key, value)?,
            "mass" => m.mass = parse_num(&key, value)?,
            "dx" => m.dx = parse_num(&key, value)?,
            "x0" => m.x0 = parse_num(&key, value)?,
            "n_points" => m.n_points = parse_num(&key, value)?,
            "beta_e" => m.beta_e = parse_num(&key, value)?,
            "gamma0" => m.gamma0 = parse_num(&key, value)?,
            "window" => m.window = parse_num(&key, value)?,
            "force" => m.force = parse_num(&key, value)?,
            "omega" => m.omega = parse_num(&key, value)?,
            "driven" => self.custom_driven = parse_num(&key, value)?,
            "gamma" => self.two_level_gamma = parse_num(&key, value)?,
            "p_excited" => self.two_level_p_excited = parse_num(&key, value)?,
            _ => return Err(config_err(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected 'key = value'", no + 1)))?;
            self.set(k, v)
                .map_err(|e| config_err(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(if is_multiple(0.25, self.dt) { 0.25 } else { self.dt })
    }

    /// Checks the grid relations for one step size.
    pub fn grid_for(&self, dt: f64) -> Result<TimeGrid, HarnessError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(config_err(format!("dt must be positive, got {dt}")));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(config_err(format!("t_final must be positive, got {}", self.t_final)));
        }
        let tau = self.tau.unwrap_or(if is_multiple(0.25, dt) { 0.25 } else { dt });
        if !is_multiple(tau, dt) {
            return Err(config_err(format!("tau = {tau} is not a multiple of dt = {dt}")));
        }
        if !is_multiple(self.t_final, tau) {
            return Err(config_err(format!(
                "t_final = {} is not a multiple of tau = {tau}",
                self.t_final
            )));
        }
        Ok(TimeGrid {
            dt,
            steps_per_macro: (tau / dt).round() as usize,
            n_macro: (self.t_final / tau).round() as usize,
        })
    }

    pub fn validate(&self) -> Result<TimeGrid, HarnessError> {
        if self.observables.is_empty() {
            return Err(config_err("no observables requested"));
        }
        if !(self.dt_ref > 0.0 && self.dt_ref.is_finite()) {
            return Err(config_err(format!("dt_ref must be positive, got {}", self.dt_ref)));
        }
        if matches!(self.solver, Solver::Stochastic(_)) && self.samples < 2 {
            return Err(config_err("samples must be at least 2"));
        }
        self.grid_for(self.dt)
    }

    pub fn build_model(&self) -> Result<ModelSetup, HarnessError> {
        match self.model {
            ModelKind::TwoLevel => {
                let (g, p) = (self.two_level_gamma, self.two_level_p_excited);
                if !(g >= 0.0 && (0.0..=1.0).contains(&p)) {
                    return Err(config_err("two-level model needs gamma >= 0 and 0 <= p_excited <= 1"));
                }
                let m = TwoLevelModel::new(g, 1.0, p);
                let energy = ComplexMatrix::from_real_diagonal(m.system.energies());
                let ops = self
                    .observables
                    .iter()
                    .map(|o| match o {
                        Observable::Energy => Ok(energy.clone()),
                        Observable::Population(n) if *n < 2 => Ok(population(2, *n)),
                        _ => Err(config_err(format!("observable {o} is not defined for the two-level model"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ModelSetup {
                    system: m.system,
                    initial: m.initial,
                    names: self.observables.iter().map(|o| o.to_string()).collect(),
                    operators: ops,
                })
            }
            kind => {
                let (params, driven) = match kind {
                    ModelKind::Free => (MorseParams::default(), false),
                    ModelKind::Driven => (MorseParams::default(), true),
                    _ => (self.morse.clone(), self.custom_driven),
                };
                if params.n_points < 5 {
                    return Err(config_err("the Morse grid needs at least 5 points"));
                }
                let m = MorseModel::new(params, driven)
                    .map_err(|e| config_err(format!("invalid model parameters: {e}")))?;
                let d = m.system.dim();
                let ops = self
                    .observables
                    .iter()
                    .map(|o| match o {
                        Observable::Energy => Ok(m.energy.clone()),
                        Observable::Position => Ok(m.position.clone()),
                        Observable::Population(n) if *n < d => Ok(population(d, *n)),
                        _ => Err(config_err(format!("observable {o} is out of range"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ModelSetup {
                    system: m.system,
                    initial: m.initial,
                    names: self.observables.iter().map(|o| o.to_string()).collect(),
                    operators: ops,
                })
            }
        }
    }
}

fn population(d: usize, n: usize) -> ComplexMatrix {
    let mut diag = vec![0.0; d];
    diag[n] = 1.0;
    ComplexMatrix::from_real_diagonal(&diag)
}

/// A constructed system, its initial ket and the requested observables, all
/// in the eigenbasis of `H0`.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub system: OpenSystem,
    pub initial: ComplexVector,
    pub names: Vec<String>,
    pub operators: Vec<ComplexMatrix>,
}
