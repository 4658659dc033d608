//! Experiment configuration: a flat `key = value` document.
//!
//! ```text
//! # lines starting with '#' are comments
//! command = bounds
//! alpha = 0.9
//! x0 = 0
//! y0 = 1
//! z0 = 0
//! n = 4
//! level = 14
//! horizon = t0n
//! m = 1000
//! seed = 42
//! ```
//!
//! | key            | value                                            | default       |
//! |----------------|--------------------------------------------------|---------------|
//! | `command`      | `simulate`, `couple`, `bounds`, `excursions`, `converge` | `simulate` |
//! | `alpha`        | Hölder exponent in `(0, 1]`                      | `0.9`         |
//! | `chain_order`  | `2` or `3`                                       | `3`           |
//! | `x0` `y0` `z0` | initial state (`z0` ignored for order 2)         | `0` `1` `0`   |
//! | `n`            | band index                                       | `4`           |
//! | `level`        | grid level, `2^level` steps over the horizon     | `12`          |
//! | `levels`       | comma list of levels for `converge`              | `10,12,14`    |
//! | `l_ref`        | reference level for `converge`                   | `18`          |
//! | `horizon`      | positive time, or `t0n` for `2^(-2n) / 2`        | `1`           |
//! | `m`            | ensemble size                                    | `100`         |
//! | `seed`         | master seed                                      | `0`           |
//! | `perturbation` | `jitter:<delta>`, `resolution:<la>,<lb>`, `scheme` | `jitter:0`  |
//! | `scheme`       | `drift_exact` or `plain`                         | `drift_exact` |
//! | `zero_noise`   | drive with the zero path                         | `false`       |
//! | `origin_eps`   | origin-hit tolerance, or `auto` for `2^(-n-6)`   | `auto`        |
//! | `continue`     | keep integrating with the noise off after a band stop | `false`  |
//! | `dump_paths`   | write each driving path as a `.bpath` file       | `false`       |
//! | `trace_stride` | keep every k-th grid point in `simulate` traces  | `1`           |
//!
//! The output directory and the worker count are run options, not part of
//! the experiment, so they never appear in the echoed configuration.

use std::fmt;
use std::str::FromStr;

use chainsde::coupling::Perturbation;
use chainsde::integrator::{band_inner, default_origin_eps, MAX_BAND};
use chainsde::noise::MAX_LEVEL;
use chainsde::stopping::{classify, t0n};
use chainsde::{ChainOrder, ChainState, Scheme, SolveConfig, SystemParams};
use thiserror::Error;

/// Upper limit on the ensemble size.
pub const MAX_PATHS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Couple,
    Bounds,
    Excursions,
    Converge,
}

impl Command {
    pub const ALL: [Command; 5] =
        [Command::Simulate, Command::Couple, Command::Bounds, Command::Excursions, Command::Converge];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Bounds => "bounds",
            Command::Excursions => "excursions",
            Command::Converge => "converge",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Time(f64),
    /// `t0n` of the configured band.
    T0n,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub alpha: f64,
    pub chain_order: ChainOrder,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub n: u32,
    pub level: u32,
    pub levels: Vec<u32>,
    pub l_ref: u32,
    pub horizon: Horizon,
    pub m: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
    pub scheme: Scheme,
    pub zero_noise: bool,
    pub origin_eps: Option<f64>,
    pub continue_after_band: bool,
    pub dump_paths: bool,
    pub trace_stride: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Simulate,
            alpha: 0.9,
            chain_order: ChainOrder::Three,
            x0: 0.0,
            y0: 1.0,
            z0: 0.0,
            n: 4,
            level: 12,
            levels: vec![10, 12, 14],
            l_ref: 18,
            horizon: Horizon::Time(1.0),
            m: 100,
            seed: 0,
            perturbation: Perturbation::InitJitter(0.0),
            scheme: Scheme::DriftExactEM,
            zero_noise: false,
            origin_eps: None,
            continue_after_band: false,
            dump_paths: false,
            trace_stride: 1,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "command",
    "alpha",
    "chain_order",
    "x0",
    "y0",
    "z0",
    "n",
    "level",
    "levels",
    "l_ref",
    "horizon",
    "m",
    "seed",
    "perturbation",
    "scheme",
    "zero_noise",
    "origin_eps",
    "continue",
    "dump_paths",
    "trace_stride",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError::new(field, format!("cannot parse {value:?}: {e}")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::new(field, format!("expected true or false, got {value:?}"))),
    }
}

fn parse_perturbation(value: &str) -> Result<Perturbation, ConfigError> {
    let field = "perturbation";
    let (kind, arg) = value.split_once(':').unwrap_or((value, ""));
    match kind.trim() {
        "jitter" => Ok(Perturbation::InitJitter(parse(field, arg.trim())?)),
        "resolution" => {
            let (a, b) = arg
                .split_once(',')
                .ok_or_else(|| ConfigError::new(field, "expected resolution:<la>,<lb>"))?;
            Ok(Perturbation::ResolutionSplit(parse(field, a.trim())?, parse(field, b.trim())?))
        }
        "scheme" if arg.is_empty() => Ok(Perturbation::SchemeSplit),
        _ => Err(ConfigError::new(field, format!("unknown perturbation {value:?}"))),
    }
}

fn format_perturbation(p: Perturbation) -> String {
    match p {
        Perturbation::InitJitter(d) => format!("jitter:{d:?}"),
        Perturbation::ResolutionSplit(a, b) => format!("resolution:{a},{b}"),
        Perturbation::SchemeSplit => "scheme".to_string(),
    }
}

impl ExperimentConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "command" => self.command = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "chain_order" => {
                let d: usize = parse(key, value)?;
                self.chain_order = ChainOrder::from_dim(d).map_err(|e| ConfigError::new(key, e.to_string()))?;
            }
            "x0" => self.x0 = parse(key, value)?,
            "y0" => self.y0 = parse(key, value)?,
            "z0" => self.z0 = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "level" => self.level = parse(key, value)?,
            "levels" => {
                self.levels = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "l_ref" => self.l_ref = parse(key, value)?,
            "horizon" => {
                self.horizon = if value == "t0n" { Horizon::T0n } else { Horizon::Time(parse(key, value)?) };
            }
            "m" => self.m = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "perturbation" => self.perturbation = parse_perturbation(value)?,
            "scheme" => {
                self.scheme = match value {
                    "drift_exact" => Scheme::DriftExactEM,
                    "plain" => Scheme::PlainEM,
                    _ => return Err(ConfigError::new(key, format!("expected drift_exact or plain, got {value:?}"))),
                }
            }
            "zero_noise" => self.zero_noise = parse_bool(key, value)?,
            "origin_eps" => self.origin_eps = if value == "auto" { None } else { Some(parse(key, value)?) },
            "continue" => self.continue_after_band = parse_bool(key, value)?,
            "dump_paths" => self.dump_paths = parse_bool(key, value)?,
            "trace_stride" => self.trace_stride = parse(key, value)?,
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key = value` document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, format!("line {} is not key = value", lineno + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key with its text form, in [`KEYS`] order. Reparsing the pairs
    /// gives back an equal configuration.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let horizon = match self.horizon {
            Horizon::T0n => "t0n".to_string(),
            Horizon::Time(t) => format!("{t:?}"),
        };
        let levels: Vec<String> = self.levels.iter().map(u32::to_string).collect();
        let values = [
            self.command.name().to_string(),
            format!("{:?}", self.alpha),
            self.chain_order.dim().to_string(),
            format!("{:?}", self.x0),
            format!("{:?}", self.y0),
            format!("{:?}", self.z0),
            self.n.to_string(),
            self.level.to_string(),
            levels.join(","),
            self.l_ref.to_string(),
            horizon,
            self.m.to_string(),
            self.seed.to_string(),
            format_perturbation(self.perturbation),
            match self.scheme {
                Scheme::DriftExactEM => "drift_exact",
                Scheme::PlainEM => "plain",
            }
            .to_string(),
            self.zero_noise.to_string(),
            self.origin_eps.map_or("auto".to_string(), |e| format!("{e:?}")),
            self.continue_after_band.to_string(),
            self.dump_paths.to_string(),
            self.trace_stride.to_string(),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.echo().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn horizon_time(&self) -> f64 {
        match self.horizon {
            Horizon::Time(t) => t,
            Horizon::T0n => t0n(self.n.clamp(1, MAX_BAND)),
        }
    }

    pub fn initial(&self) -> ChainState {
        match self.chain_order {
            ChainOrder::Three => ChainState::new3(0.0, self.x0, self.y0, self.z0),
            ChainOrder::Two => ChainState::new2(0.0, self.x0, self.y0),
        }
    }

    pub fn params(&self) -> Result<SystemParams, ConfigError> {
        SystemParams::new(self.alpha, self.initial()).map_err(|e| {
            let field = if self.alpha > 0.0 && self.alpha <= 1.0 { "x0" } else { "alpha" };
            ConfigError::new(field, e.to_string())
        })
    }

    pub fn solve_config(&self) -> SolveConfig {
        let mut cfg = SolveConfig::new(self.level, self.n, self.horizon_time())
            .with_scheme(self.scheme)
            .with_continuation(self.continue_after_band);
        if let Some(eps) = self.origin_eps {
            cfg = cfg.with_origin_eps(eps);
        }
        cfg
    }

    /// Checks every field before anything runs; the error names the first
    /// offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError::new("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        for (k, v) in [("x0", self.x0), ("y0", self.y0), ("z0", self.z0)] {
            if !v.is_finite() {
                return Err(ConfigError::new(k, "must be finite"));
            }
        }
        self.params()?;
        if self.n == 0 || self.n > MAX_BAND {
            return Err(ConfigError::new("n", format!("must be in 1..={MAX_BAND}, got {}", self.n)));
        }
        if self.level > MAX_LEVEL {
            return Err(ConfigError::new("level", format!("must be at most {MAX_LEVEL}, got {}", self.level)));
        }
        if let Horizon::Time(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::new("horizon", format!("must be positive and finite, got {t}")));
            }
        }
        if self.m == 0 || self.m > MAX_PATHS {
            return Err(ConfigError::new("m", format!("must be in 1..={MAX_PATHS}, got {}", self.m)));
        }
        if self.trace_stride == 0 {
            return Err(ConfigError::new("trace_stride", "must be positive"));
        }
        if let Some(eps) = self.origin_eps {
            if !(eps > 0.0 && eps <= band_inner(self.n)) {
                return Err(ConfigError::new("origin_eps", format!("must lie in (0, 2^-n], got {eps}")));
            }
        }
        if self.origin_eps.is_none() && default_origin_eps(self.n) == 0.0 {
            return Err(ConfigError::new("origin_eps", "default underflows for this n; set it explicitly"));
        }
        match self.command {
            Command::Couple => {
                self.perturbation.validate().map_err(|e| ConfigError::new("perturbation", e.to_string()))?;
                if let Perturbation::ResolutionSplit(a, b) = self.perturbation {
                    if a.max(b) > MAX_LEVEL {
                        return Err(ConfigError::new("perturbation", format!("levels must be at most {MAX_LEVEL}")));
                    }
                }
            }
            Command::Bounds => {
                if self.chain_order != ChainOrder::Three {
                    return Err(ConfigError::new("chain_order", "bounds apply to the three-dimensional chain"));
                }
                classify(&self.initial(), self.n).map_err(|e| ConfigError::new("x0", e.to_string()))?;
            }
            Command::Converge => {
                if self.l_ref > MAX_LEVEL {
                    return Err(ConfigError::new("l_ref", format!("must be at most {MAX_LEVEL}")));
                }
                let mut distinct = self.levels.clone();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() < 2 {
                    return Err(ConfigError::new("levels", "need at least two distinct levels"));
                }
                if distinct.iter().any(|&l| l >= self.l_ref) {
                    return Err(ConfigError::new("levels", format!("all levels must be below l_ref = {}", self.l_ref)));
                }
            }
            Command::Simulate | Command::Excursions => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let cfg = ExperimentConfig::from_text(
            "# comment\ncommand = bounds\nalpha = 0.9\nx0 = 0\ny0 = 1\nz0 = 0\nn = 4\nlevel = 14\nhorizon = t0n\nm = 1000\nseed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.command, Command::Bounds);
        assert_eq!(cfg.horizon_time(), t0n(4));
        assert_eq!(cfg.m, 1000);
        cfg.validate().unwrap();
    }

    #[test]
    fn echo_reparses_to_equal_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("command = couple\nperturbation = resolution:12,18\nalpha = 0.1\norigin_eps = 1e-7\nx0 = -0.30000000000000004\nlevels = 3,5\n").unwrap();
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        cfg.set("perturbation", "jitter:1e-300").unwrap();
        cfg.set("horizon", "0.1").unwrap();
        cfg.set("scheme", "plain").unwrap();
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_text("alpha = abc").unwrap_err();
        assert_eq!(e.field, "alpha");
        let e = ExperimentConfig::from_text("bogus = 1").unwrap_err();
        assert_eq!(e.field, "bogus");
        let mut cfg = ExperimentConfig::default();
        cfg.alpha = 1.5;
        assert_eq!(cfg.validate().unwrap_err().field, "alpha");
        let mut cfg = ExperimentConfig { command: Command::Converge, levels: vec![10], ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "levels");
        cfg.levels = vec![10, 20];
        assert_eq!(cfg.validate().unwrap_err().field, "levels");
        let cfg = ExperimentConfig { command: Command::Couple, perturbation: Perturbation::ResolutionSplit(4, 4), ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "perturbation");
        let cfg = ExperimentConfig { command: Command::Bounds, x0: 0.5, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "x0");
        let cfg = ExperimentConfig { m: 0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "m");
        let cfg = ExperimentConfig { x0: 0.0, y0: 0.0, z0: 0.0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "x0");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ExperimentConfig::from_text("alpha 0.9").is_err());
        assert!(ExperimentConfig::from_text("perturbation = resolution:12").is_err());
        assert!(ExperimentConfig::from_text("zero_noise = maybe").is_err());
    }
}
