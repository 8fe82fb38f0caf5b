//! Command-line front end: flat `key = value` configuration files, flag
//! overrides, validation and dispatch to the studies.
//!
//! Every key can be given in a config file (`--config path`, alias `--spec`)
//! or as a flag (`--key value` or `--key=value`, dashes and underscores are
//! interchangeable). Flags win over the file, the file wins over defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::parser::ValueSource;
use clap::{Arg, ArgAction};
use thiserror::Error;

use crate::density::{ulam_density, BinPosition, BoundaryMode, HMinRule};
use crate::dynamics::{solve_fold, MapFamily, MapModel, Side};
use crate::estimator::Method;
use crate::experiments::{
    default_seed_points, estimate_methods, linspace, linspace_step, reference, run_boundary_study, run_grid_study,
    run_rmse_sweep, run_variance_demo, BoundaryKind, BoundarySpec, EstimatorSettings, ExperimentError, GridRow,
    GridSpec, Protocol, Reference, RmseSpec, UlamVariant, VarianceDemoSpec,
};
use crate::io::{self, IoError};
use crate::noise::{NoiseKind, NoiseModel, RngStream};
use crate::simulate::{continuation_sweep, generate, SweepConfig};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("family", "tanh-shift", "map family: linear, tanh-shift, modified-tanh"),
    ("noise", "uniform", "noise law: uniform, truncated-normal"),
    ("epsilon", "0.1", "noise bound"),
    ("a", "0", "parameter (lambda for the linear family)"),
    ("a_grid", "", "parameter grid: list, start:step:stop or linspace(lo,hi,count); empty means [a]"),
    ("n", "100000", "series length"),
    ("burn_in", "100", "discarded initial iterates"),
    ("y0", "auto", "initial value; auto is the invariant interval midpoint"),
    ("b", "200", "histogram bins"),
    ("q", "0.3", "tail mass fraction in (0, 1]"),
    ("h_min", "auto", "height threshold: auto (h_min_fraction of the max) or an absolute value"),
    ("h_min_fraction", "0.01", "fraction of the max height used when h_min = auto"),
    ("boundary", "estimated", "boundary mode: true, estimated"),
    ("x_minus", "auto", "known left boundary for estimate with boundary = true"),
    ("methods", "leading", "comma list of leading, higher, interval"),
    ("position", "midpoint", "bin representative: midpoint, left, right"),
    ("min_visits", "100", "visits per interval for the interval method"),
    ("realizations", "100", "independent realizations per cell"),
    ("seed", "0", "master seed"),
    ("jobs", "0", "worker threads; 0 uses all cores"),
    ("protocol", "independent", "grid protocol: independent, continuation"),
    ("output", ".", "output directory"),
    ("input", "", "input series CSV for estimate"),
    ("side", "lower", "fold side: lower, upper"),
    ("bins", "4096", "Ulam bins"),
    ("tol", "1e-10", "Ulam power-iteration tolerance"),
    ("seed_points", "auto", "seed points for the invariant interval search"),
    ("ulam_bins", "0", "variance-demo Ulam variant bins; 0 disables"),
    ("ulam_q", "0.0001", "variance-demo Ulam variant tail fraction"),
    ("ulam_h_min_fraction", "1e-12", "variance-demo Ulam variant height threshold as a fraction of the max"),
    ("margin_fraction", "0.05", "escape margin as a fraction of the reference interval width"),
    ("b_grid", "20:20:500", "rmse-sweep bins axis"),
    ("q_fixed", "0.1,0.35,0.6", "rmse-sweep fixed q values for the bins axis"),
    ("q_grid", "0.01:0.01:0.8", "rmse-sweep q axis"),
    ("b_fixed", "100,200,300", "rmse-sweep fixed bins for the q axis"),
    ("lambda_targets", "0.24,0.42,0.65,0.8", "boundary-study lambda values"),
    ("n_offsets", "20", "boundary-study offsets per realization"),
    ("raw", "false", "rmse-sweep also writes every individual estimate"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Sweep,
    Ulam,
    Fold,
    GridStudy,
    VarianceDemo,
    RmseSweep,
    BoundaryStudy,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Simulate,
        Command::Estimate,
        Command::Sweep,
        Command::Ulam,
        Command::Fold,
        Command::GridStudy,
        Command::VarianceDemo,
        Command::RmseSweep,
        Command::BoundaryStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Sweep => "sweep",
            Command::Ulam => "ulam",
            Command::Fold => "fold",
            Command::GridStudy => "grid-study",
            Command::VarianceDemo => "variance-demo",
            Command::RmseSweep => "rmse-sweep",
            Command::BoundaryStudy => "boundary-study",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().replace('_', "-");
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown command '{s}'"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{key}': cannot read '{value}' as {expected}")]
    TypeMismatch { key: String, value: String, expected: String },
    #[error("key '{key}': {message}")]
    RangeViolation { key: String, message: String },
    #[error("key '{0}' is required for this command")]
    Missing(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    /// Help or version text requested; not an error for the caller.
    #[error("{0}")]
    Help(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::UnknownKey(_) => "UnknownKey",
            ConfigError::TypeMismatch { .. } => "TypeMismatch",
            ConfigError::RangeViolation { .. } => "RangeViolation",
            ConfigError::Missing(_) => "MissingKey",
            ConfigError::File { .. } => "ConfigFile",
            ConfigError::Usage(_) => "Usage",
            ConfigError::Help(_) => "Help",
        }
    }

    /// Key the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) | ConfigError::Missing(k) => Some(k),
            ConfigError::TypeMismatch { key, .. } | ConfigError::RangeViolation { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl RunError {
    pub fn module(&self) -> &'static str {
        match self {
            RunError::Config(_) => "cli",
            RunError::Experiment(e) => e.module(),
            RunError::Io(_) => "io",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(e) => e.code(),
            RunError::Experiment(e) => e.code(),
            RunError::Io(e) => e.code(),
        }
    }

    /// 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable error record.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({ "module": self.module(), "code": self.code(), "message": self.to_string() });
        if let RunError::Config(c) = self {
            if let Some(k) = c.key() {
                v["key"] = k.into();
            }
        }
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Independent,
    Continuation,
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub family: MapFamily,
    pub noise: NoiseKind,
    pub epsilon: f64,
    pub a: f64,
    pub a_grid: Vec<f64>,
    pub n: usize,
    pub burn_in: usize,
    pub y0: Option<f64>,
    pub b: usize,
    pub q: f64,
    pub h_min: HMinRule,
    pub boundary: BoundaryKind,
    pub x_minus: Option<f64>,
    pub methods: Vec<Method>,
    pub position: BinPosition,
    pub min_visits: usize,
    pub realizations: usize,
    pub seed: u64,
    pub jobs: usize,
    pub protocol: ProtocolKind,
    pub output: PathBuf,
    pub input: Option<PathBuf>,
    pub side: Side,
    pub bins: usize,
    pub tol: f64,
    pub seed_points: Vec<f64>,
    pub ulam_bins: usize,
    pub ulam_q: f64,
    pub ulam_h_min_fraction: f64,
    pub margin_fraction: f64,
    pub b_grid: Vec<usize>,
    pub q_fixed: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub b_fixed: Vec<usize>,
    pub lambda_targets: Vec<f64>,
    pub n_offsets: usize,
    pub raw: bool,
    /// Effective raw values of every key, for the manifest.
    pub echo: BTreeMap<String, String>,
    /// Keys set by a file or a flag rather than by default.
    pub explicit: BTreeSet<String>,
}

fn canonical(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parses flat `key = value` text; `#` starts a comment. A `command` key is
/// accepted alongside the documented ones.
pub fn parse_kv(text: &str, origin: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::File { path: origin.into(), message: format!("line {}: expected key = value", i + 1) });
        };
        let k = canonical(k);
        if k != "command" && !is_known(&k) {
            return Err(ConfigError::UnknownKey(k));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

fn clap_command() -> clap::Command {
    let mut cmd = clap::Command::new("tailwarn")
        .about("Bifurcation-proximity estimation from stationary-density tails")
        .version(env!("CARGO_PKG_VERSION"))
        .arg(Arg::new("command").help(
            "simulate | estimate | sweep | ulam | fold | grid-study | variance-demo | rmse-sweep | boundary-study",
        ))
        .arg(Arg::new("config").long("config").visible_alias("spec").value_name("PATH").help("config file"));
    for (key, default, help) in KEYS {
        let dashed = key.replace('_', "-");
        let mut arg = Arg::new(*key)
            .long(dashed.clone())
            .value_name("VALUE")
            .action(ArgAction::Set)
            .allow_hyphen_values(true)
            .help(format!("{help} [default: {default}]"));
        if dashed != *key {
            arg = arg.alias(*key);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Parses command-line arguments (without the program name) into a
/// validated configuration.
pub fn parse_args<I, S>(args: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = std::iter::once("tailwarn".to_string()).chain(args.into_iter().map(Into::into)).collect();
    let matches = clap_command().try_get_matches_from(&argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ConfigError::Help(e.to_string()),
        ErrorKind::UnknownArgument => match e.get(ContextKind::InvalidArg) {
            Some(ContextValue::String(s)) => ConfigError::UnknownKey(canonical(s.split('=').next().unwrap_or(s))),
            _ => ConfigError::Usage(e.to_string()),
        },
        _ => ConfigError::Usage(e.to_string()),
    })?;
    let mut file = BTreeMap::new();
    if let Some(path) = matches.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.clone(), message: e.to_string() })?;
        file = parse_kv(&text, path)?;
    }
    let mut flags = BTreeMap::new();
    for (key, _, _) in KEYS {
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            flags.insert(key.to_string(), matches.get_one::<String>(key).cloned().unwrap_or_default());
        }
    }
    if let Some(c) = matches.get_one::<String>("command") {
        flags.insert("command".into(), c.clone());
    }
    resolve(file, flags)
}

/// Merges defaults, file values and flag values, then validates.
pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let mut merged: BTreeMap<String, String> = KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
    let mut explicit = BTreeSet::new();
    for (k, v) in file.into_iter().chain(flags) {
        if k != "command" && !is_known(&k) {
            return Err(ConfigError::UnknownKey(k));
        }
        explicit.insert(k.clone());
        merged.insert(k, v);
    }
    RunConfig::from_map(merged, explicit)
}

fn mismatch(key: &str, value: &str, expected: &str) -> ConfigError {
    ConfigError::TypeMismatch { key: key.into(), value: value.into(), expected: expected.into() }
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::RangeViolation { key: key.into(), message: message.into() }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.trim().parse().map_err(|_| mismatch(key, v, "a number"))?;
    if !x.is_finite() {
        return Err(range(key, "must be finite"));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    let t = v.trim();
    if let Ok(u) = t.parse::<usize>() {
        return Ok(u);
    }
    // accept integral scientific notation such as 1e5
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= 1e15 => Ok(x as usize),
        _ => Err(mismatch(key, v, "a non-negative integer")),
    }
}

fn parse_enum<T: FromStr<Err = String>>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>().map_err(|e| mismatch(key, v, &e))
}

/// Parses a list, `start:step:stop` or `linspace(lo,hi,count)`.
pub fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    let t = v.trim();
    if let Some(inner) = t.strip_prefix("linspace(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(mismatch(key, v, "linspace(lo,hi,count)"));
        }
        let count = parse_usize(key, parts[2])?;
        if count == 0 {
            return Err(range(key, "count must be positive"));
        }
        return Ok(linspace(parse_f64(key, parts[0])?, parse_f64(key, parts[1])?, count));
    }
    if t.contains(':') {
        let parts: Vec<&str> = t.split(':').collect();
        if parts.len() != 3 {
            return Err(mismatch(key, v, "start:step:stop"));
        }
        let (start, step, stop) = (parse_f64(key, parts[0])?, parse_f64(key, parts[1])?, parse_f64(key, parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(range(key, "needs step > 0 and stop >= start"));
        }
        if (stop - start) / step > 1e7 {
            return Err(range(key, "too many grid points"));
        }
        return Ok(linspace_step(start, step, stop));
    }
    if t.is_empty() {
        return Ok(Vec::new());
    }
    t.split(',').map(|s| parse_f64(key, s)).collect()
}

fn parse_usize_grid(key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    parse_grid(key, v)?
        .into_iter()
        .map(|x| {
            let r = x.round();
            if (x - r).abs() > 1e-9 || r < 0.0 {
                Err(mismatch(key, v, "non-negative integers"))
            } else {
                Ok(r as usize)
            }
        })
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(mismatch(key, v, "a boolean")),
    }
}

fn check_fraction(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(range(key, format!("{x} is outside (0, 1]")))
    }
}

fn check_min(key: &str, x: usize, min: usize) -> Result<usize, ConfigError> {
    if x >= min {
        Ok(x)
    } else {
        Err(range(key, format!("{x} is below the minimum {min}")))
    }
}

impl RunConfig {
    pub fn from_map(m: BTreeMap<String, String>, explicit: BTreeSet<String>) -> Result<Self, ConfigError> {
        let get = |k: &str| m.get(k).map(String::as_str).unwrap_or("");
        let command: Command = match m.get("command") {
            Some(c) => parse_enum("command", c)?,
            None => return Err(ConfigError::Missing("command".into())),
        };
        let family: MapFamily = parse_enum("family", get("family"))?;
        let epsilon = parse_f64("epsilon", get("epsilon"))?;
        if epsilon <= 0.0 {
            return Err(range("epsilon", "must be positive"));
        }
        let a = parse_f64("a", get("a"))?;
        let mut a_grid = parse_grid("a_grid", get("a_grid"))?;
        if a_grid.is_empty() {
            a_grid.push(a);
        }
        if a_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(range("a_grid", "must be strictly increasing"));
        }
        let y0 = match get("y0").trim() {
            "auto" | "" => None,
            v => Some(parse_f64("y0", v)?),
        };
        let h_min_fraction = check_fraction("h_min_fraction", parse_f64("h_min_fraction", get("h_min_fraction"))?)?;
        let h_min = match get("h_min").trim() {
            "auto" | "" => HMinRule::FractionOfMax(h_min_fraction),
            v => {
                let x = parse_f64("h_min", v)?;
                if x < 0.0 {
                    return Err(range("h_min", "must be non-negative"));
                }
                HMinRule::Absolute(x)
            }
        };
        let x_minus = match get("x_minus").trim() {
            "auto" | "" => None,
            v => Some(parse_f64("x_minus", v)?),
        };
        let methods: Vec<Method> = get("methods")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_enum::<Method>("methods", s.trim()))
            .collect::<Result<_, _>>()?;
        if methods.is_empty() {
            return Err(range("methods", "at least one method is required"));
        }
        let protocol = match get("protocol").trim() {
            "independent" => ProtocolKind::Independent,
            "continuation" => ProtocolKind::Continuation,
            v => return Err(mismatch("protocol", v, "independent or continuation")),
        };
        let seed_points = match get("seed_points").trim() {
            "auto" | "" => default_seed_points(family),
            v => parse_grid("seed_points", v)?,
        };
        let tol = parse_f64("tol", get("tol"))?;
        if tol <= 0.0 {
            return Err(range("tol", "must be positive"));
        }
        let margin_fraction = parse_f64("margin_fraction", get("margin_fraction"))?;
        if margin_fraction < 0.0 {
            return Err(range("margin_fraction", "must be non-negative"));
        }
        let q_fixed = parse_grid("q_fixed", get("q_fixed"))?;
        let q_grid = parse_grid("q_grid", get("q_grid"))?;
        for (k, list) in [("q_fixed", &q_fixed), ("q_grid", &q_grid)] {
            for &q in list.iter() {
                check_fraction(k, q)?;
            }
        }
        let b_grid = parse_usize_grid("b_grid", get("b_grid"))?;
        let b_fixed = parse_usize_grid("b_fixed", get("b_fixed"))?;
        for (k, list) in [("b_grid", &b_grid), ("b_fixed", &b_fixed)] {
            for &b in list.iter() {
                check_min(k, b, 2)?;
            }
        }
        let lambda_targets = parse_grid("lambda_targets", get("lambda_targets"))?;
        if lambda_targets.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(range("lambda_targets", "values must lie in (0, 1)"));
        }
        let n = check_min("n", parse_usize("n", get("n"))?, 2)?;
        let b = check_min("b", parse_usize("b", get("b"))?, 2)?;
        let input = Some(get("input").trim()).filter(|s| !s.is_empty()).map(PathBuf::from);
        Ok(RunConfig {
            command,
            family,
            noise: parse_enum("noise", get("noise"))?,
            epsilon,
            a,
            a_grid,
            n,
            burn_in: parse_usize("burn_in", get("burn_in"))?,
            y0,
            b,
            q: check_fraction("q", parse_f64("q", get("q"))?)?,
            h_min,
            boundary: parse_enum("boundary", get("boundary"))?,
            x_minus,
            methods,
            position: parse_enum("position", get("position"))?,
            min_visits: check_min("min_visits", parse_usize("min_visits", get("min_visits"))?, 1)?,
            realizations: check_min("realizations", parse_usize("realizations", get("realizations"))?, 1)?,
            seed: get("seed").trim().parse().map_err(|_| mismatch("seed", get("seed"), "an unsigned 64-bit integer"))?,
            jobs: parse_usize("jobs", get("jobs"))?,
            protocol,
            output: PathBuf::from(get("output").trim()),
            input,
            side: parse_enum("side", get("side"))?,
            bins: check_min("bins", parse_usize("bins", get("bins"))?, 2)?,
            tol,
            seed_points,
            ulam_bins: parse_usize("ulam_bins", get("ulam_bins"))?,
            ulam_q: check_fraction("ulam_q", parse_f64("ulam_q", get("ulam_q"))?)?,
            ulam_h_min_fraction: check_fraction(
                "ulam_h_min_fraction",
                parse_f64("ulam_h_min_fraction", get("ulam_h_min_fraction"))?,
            )?,
            margin_fraction,
            b_grid,
            q_fixed,
            q_grid,
            b_fixed,
            lambda_targets,
            n_offsets: check_min("n_offsets", parse_usize("n_offsets", get("n_offsets"))?, 1)?,
            raw: parse_bool("raw", get("raw"))?,
            echo: m,
            explicit,
        })
    }

    fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            b: self.b,
            q: self.q,
            h_min: self.h_min,
            position: self.position,
            methods: self.methods.clone(),
            min_visits: self.min_visits,
        }
    }

    fn reference_at(&self, a: f64) -> Option<Reference> {
        reference(self.family, self.epsilon, a, &self.seed_points).ok()
    }

    /// Explicit `y0`, else the interval midpoint at `a`, else the first seed point.
    fn start_value(&self, a: f64) -> f64 {
        self.y0
            .or_else(|| self.reference_at(a).map(|r| r.interval.midpoint()))
            .unwrap_or(self.seed_points.first().copied().unwrap_or(0.0))
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            family: self.family,
            epsilon: self.epsilon,
            noise: self.noise,
            a_grid: self.a_grid.clone(),
            n: self.n,
            estimator: self.settings(),
            boundary: self.boundary,
            realizations: self.realizations,
            seed: self.seed,
            protocol: match self.protocol {
                ProtocolKind::Independent => Protocol::Independent { burn_in: self.burn_in },
                ProtocolKind::Continuation => {
                    Protocol::Continuation { y0: self.start_value(self.a_grid[0]), burn_in: self.burn_in }
                }
            },
            seed_points: self.seed_points.clone(),
        }
    }

    /// Variance-demo settings; the family is fixed to the modified tanh map.
    pub fn variance_spec(&self) -> VarianceDemoSpec {
        VarianceDemoSpec {
            epsilon: self.epsilon,
            a_grid: self.a_grid.clone(),
            n: self.n,
            realizations: self.realizations,
            seed: self.seed,
            burn_in: self.burn_in,
            seed_point: self.seed_points.first().copied().unwrap_or(3.0),
            estimator: self.settings(),
            margin_fraction: self.margin_fraction,
            ulam: (self.ulam_bins > 0).then_some(UlamVariant {
                bins: self.ulam_bins,
                q: self.ulam_q,
                h_min: HMinRule::FractionOfMax(self.ulam_h_min_fraction),
            }),
        }
    }

    pub fn rmse_spec(&self) -> RmseSpec {
        RmseSpec {
            family: self.family,
            epsilon: self.epsilon,
            noise: self.noise,
            a_grid: self.a_grid.clone(),
            n: self.n,
            realizations: self.realizations,
            seed: self.seed,
            burn_in: self.burn_in,
            boundary: self.boundary,
            methods: self.methods.clone(),
            h_min: self.h_min,
            b_grid: self.b_grid.clone(),
            q_fixed: self.q_fixed.clone(),
            q_grid: self.q_grid.clone(),
            b_fixed: self.b_fixed.clone(),
            seed_points: self.seed_points.clone(),
            min_visits: self.min_visits,
        }
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        BoundarySpec {
            family: self.family,
            epsilon: self.epsilon,
            noise: self.noise,
            lambda_targets: self.lambda_targets.clone(),
            n: self.n,
            b: self.b,
            q: self.q,
            h_min: self.h_min,
            methods: self.methods.clone(),
            realizations: self.realizations,
            seed: self.seed,
            burn_in: self.burn_in,
            n_offsets: self.n_offsets,
            seed_point: self.seed_points.first().copied().unwrap_or(0.0),
        }
    }

    fn manifest_echo(&self) -> BTreeMap<String, String> {
        let mut echo = self.echo.clone();
        // the output location does not change results
        echo.remove("output");
        echo.insert("command".into(), self.command.name().into());
        echo
    }
}

/// What a successful run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    /// Text for standard output.
    pub stdout: String,
    pub files: Vec<PathBuf>,
}

/// Runs a validated configuration, writing outputs under `config.output`.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| ConfigError::RangeViolation { key: "jobs".into(), message: e.to_string() })?;
    pool.install(|| dispatch(config))
}

fn prepare_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| RunError::Io(IoError::File { path: dir.display().to_string(), source }))
}

fn ex<T, E>(r: Result<T, E>) -> Result<T, RunError>
where
    ExperimentError: From<E>,
{
    r.map_err(|e| RunError::Experiment(ExperimentError::from(e)))
}

fn dispatch(cfg: &RunConfig) -> Result<RunReport, RunError> {
    if cfg.command == Command::Fold {
        let fold = ex(solve_fold(cfg.family, cfg.epsilon, cfg.side))?;
        return Ok(RunReport {
            stdout: format!("x_star,a_star\n{},{}\n", io::num(fold.x_star), io::num(fold.a_star)),
            files: Vec::new(),
        });
    }
    let dir = cfg.output.clone();
    prepare_dir(&dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    match cfg.command {
        Command::Fold => unreachable!(),
        Command::Simulate => {
            let model = ex(MapModel::new(cfg.family, cfg.a, cfg.epsilon))?;
            let noise = NoiseModel::for_model(cfg.noise, &model);
            let mut rng = RngStream::new(cfg.seed, 0);
            let series = ex(generate(&model, &noise, cfg.start_value(cfg.a), cfg.n, cfg.burn_in, &mut rng))?;
            io::write_series(&emit("series.csv"), &series.values)?;
        }
        Command::Estimate => {
            let input = cfg.input.as_ref().ok_or_else(|| ConfigError::Missing("input".into()))?;
            let values = io::read_series(input)?;
            let truth = if cfg.explicit.contains("a") { cfg.reference_at(cfg.a) } else { None };
            let mode = match cfg.boundary {
                BoundaryKind::Estimated => BoundaryMode::Estimated,
                BoundaryKind::True => BoundaryMode::True(
                    cfg.x_minus
                        .or(truth.map(|r| r.interval.x_minus))
                        .ok_or_else(|| ConfigError::Missing("x_minus".into()))?,
                ),
            };
            let lambda = truth.map_or(f64::NAN, |r| r.lambda);
            let rows: Vec<GridRow> = cfg
                .methods
                .iter()
                .zip(estimate_methods(&values, mode, &cfg.settings()))
                .map(|(&method, est)| {
                    let (lambda_hat, status) = match est {
                        Ok(v) => (Some(v), "ok".to_string()),
                        Err(e) => (None, e.code().to_string()),
                    };
                    GridRow {
                        a: if cfg.explicit.contains("a") { cfg.a } else { f64::NAN },
                        lambda_true: lambda,
                        method,
                        boundary: cfg.boundary,
                        n: values.len(),
                        b: cfg.b,
                        q: cfg.q,
                        realization: 0,
                        lambda_hat,
                        abs_error: lambda_hat
                            .filter(|_| lambda.is_finite())
                            .map(|v| (lambda - crate::experiments::comparable(method, v)).abs()),
                        status,
                    }
                })
                .collect();
            io::write_estimates(&emit("estimates.csv"), &rows)?;
        }
        Command::Sweep => {
            let first = cfg.a_grid[0];
            let tipping_reference = cfg
                .reference_at(first)
                .map(|r| (r.interval, cfg.margin_fraction * r.interval.width()));
            let sc = SweepConfig {
                family: cfg.family,
                epsilon: cfg.epsilon,
                noise_kind: cfg.noise,
                a_grid: cfg.a_grid.clone(),
                n_per_a: cfg.n,
                y0_first: cfg.start_value(first),
                burn_in_first: cfg.burn_in,
                keep_series: false,
                tipping_reference,
            };
            let mut rng = RngStream::new(cfg.seed, 0);
            let sweep = ex(continuation_sweep(&sc, &mut rng))?;
            io::write_sweep(&emit("sweep.csv"), &sweep)?;
        }
        Command::Ulam => {
            let model = ex(MapModel::new(cfg.family, cfg.a, cfg.epsilon))?;
            let refr = ex(reference(cfg.family, cfg.epsilon, cfg.a, &cfg.seed_points))?;
            let noise = NoiseModel::for_model(cfg.noise, &model);
            let u = ex(ulam_density(&model, &noise, &refr.interval, cfg.bins, cfg.tol))?;
            io::write_density(&emit("density.csv"), &u.histogram(cfg.position))?;
        }
        Command::GridStudy => {
            let spec = cfg.grid_spec();
            let res = ex(run_grid_study(&spec))?;
            io::write_estimates(&emit("estimates.csv"), &res.rows)?;
            io::write_summary(&emit("summary.csv"), &res.summaries)?;
        }
        Command::VarianceDemo => {
            if cfg.family != MapFamily::ModifiedTanh {
                return Err(ConfigError::RangeViolation {
                    key: "family".into(),
                    message: "variance-demo runs on the modified-tanh family".into(),
                }
                .into());
            }
            let spec = cfg.variance_spec();
            let res = ex(run_variance_demo(&spec))?;
            io::write_variance_demo(&dir, &res, cfg.realizations)?;
            for f in ["variance.csv", "variance_summary.csv", "tipping.csv"] {
                emit(f);
            }
            if !res.ulam.is_empty() {
                emit("ulam_estimates.csv");
            }
        }
        Command::RmseSweep => {
            let spec = cfg.rmse_spec();
            let table = ex(run_rmse_sweep(&spec))?;
            io::write_rmse(&emit("rmse.csv"), &table.rows)?;
            if cfg.raw {
                io::write_estimates(&emit("estimates.csv"), &table.raw)?;
            }
        }
        Command::BoundaryStudy => {
            let spec = cfg.boundary_spec();
            let res = ex(run_boundary_study(&spec))?;
            io::write_boundary(&emit("boundary.csv"), cfg.family.name(), &res.rows)?;
            io::write_boundary_slopes(&emit("boundary_slopes.csv"), &res.slopes)?;
        }
    }
    io::write_manifest(&emit("manifest.txt"), cfg.seed, &cfg.manifest_echo())?;
    Ok(RunReport { stdout: String::new(), files })
}
