//! Experiment configuration: a line-oriented `key = value` format.
//!
//! ```text
//! # comment
//! algorithms = cmaes, gp-1, gp-5, ada-kendall, ada-rd, ada-kl
//! functions = sphere, rosenbrock
//! dims = 2, 5
//! budget_multiplier = 250
//! target = 1e-8
//! master_seed = 42
//! instances = 1, 2, 3, 4, 5, 41, 42, 43, 44, 45, 46, 47, 48, 49, 50
//! output_dir = results
//! radius = 8
//! n_req = auto
//! n_max = auto
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::benchmarks::FunctionId;
use crate::error::{Error, Result};
use crate::harness::{AlgorithmSpec, TrialSettings};

/// Default instance identifiers (the BBOB 2015 workshop set).
pub const DEFAULT_INSTANCES: [u64; 15] = [1, 2, 3, 4, 5, 41, 42, 43, 44, 45, 46, 47, 48, 49, 50];

pub const KEYS: [&str; 11] = [
    "algorithms",
    "functions",
    "dims",
    "budget_multiplier",
    "target",
    "master_seed",
    "instances",
    "output_dir",
    "radius",
    "n_req",
    "n_max",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<AlgorithmSpec>,
    pub functions: Vec<FunctionId>,
    pub dims: Vec<usize>,
    pub budget_multiplier: usize,
    pub target: f64,
    pub master_seed: u64,
    pub instances: Vec<u64>,
    pub output_dir: PathBuf,
    pub radius: f64,
    pub n_req: Option<usize>,
    pub n_max: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![
                AlgorithmSpec::Cmaes,
                AlgorithmSpec::GpFixed { gm: 1 },
                AlgorithmSpec::GpFixed { gm: 5 },
                "ada-kl".parse().expect("preset"),
                "ada-kendall".parse().expect("preset"),
                "ada-rd".parse().expect("preset"),
            ],
            functions: FunctionId::ALL.to_vec(),
            dims: vec![2, 3, 5],
            budget_multiplier: 250,
            target: 1e-8,
            master_seed: 0,
            instances: DEFAULT_INSTANCES.to_vec(),
            output_dir: PathBuf::from("results"),
            radius: 8.0,
            n_req: None,
            n_max: None,
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| config_error(key, format!("`{s}`: {e}"))))
        .collect()
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_error(key, format!("cannot parse `{value}`")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        parse_scalar(key, value).map(Some)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "algorithms" => self.algorithms = parse_list(key, value)?,
            "functions" => self.functions = parse_list(key, value)?,
            "dims" => self.dims = parse_list(key, value)?,
            "budget_multiplier" => self.budget_multiplier = parse_scalar(key, value)?,
            "target" => self.target = parse_scalar(key, value)?,
            "master_seed" => self.master_seed = parse_scalar(key, value)?,
            "instances" => self.instances = parse_list(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "radius" => self.radius = parse_scalar(key, value)?,
            "n_req" => self.n_req = parse_auto(key, value)?,
            "n_max" => self.n_max = parse_auto(key, value)?,
            _ => return Err(config_error(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(
                    line,
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_error("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let auto = |v: Option<usize>| v.map_or("auto".to_string(), |n| n.to_string());
        let _ = writeln!(s, "algorithms = {}", join(&self.algorithms));
        let _ = writeln!(s, "functions = {}", join(&self.functions));
        let _ = writeln!(s, "dims = {}", join(&self.dims));
        let _ = writeln!(s, "budget_multiplier = {}", self.budget_multiplier);
        let _ = writeln!(s, "target = {:e}", self.target);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "instances = {}", join(&self.instances));
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "n_req = {}", auto(self.n_req));
        let _ = writeln!(s, "n_max = {}", auto(self.n_max));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(config_error("algorithms", "list is empty"));
        }
        if self.functions.is_empty() {
            return Err(config_error("functions", "list is empty"));
        }
        if self.dims.is_empty() {
            return Err(config_error("dims", "list is empty"));
        }
        if let Some(d) = self.dims.iter().find(|d| **d < 2) {
            return Err(config_error("dims", format!("dimension {d} < 2")));
        }
        if self.instances.is_empty() {
            return Err(config_error("instances", "list is empty"));
        }
        if self.budget_multiplier < 1 {
            return Err(config_error("budget_multiplier", "must be at least 1"));
        }
        if !(self.target >= 0.0) {
            return Err(config_error("target", "must be nonnegative"));
        }
        if !(self.radius > 0.0) {
            return Err(config_error("radius", "must be positive"));
        }
        if let (Some(r), Some(m)) = (self.n_req, self.n_max) {
            if r > m {
                return Err(config_error("n_req", format!("{r} exceeds n_max = {m}")));
            }
        }
        if self.n_req == Some(0) {
            return Err(config_error("n_req", "must be positive"));
        }
        if self.n_max == Some(0) {
            return Err(config_error("n_max", "must be positive"));
        }
        Ok(())
    }

    pub fn budget(&self, dim: usize) -> usize {
        self.budget_multiplier * dim
    }

    pub fn trial_settings(&self, dim: usize) -> TrialSettings {
        TrialSettings {
            budget: self.budget(dim),
            target: self.target,
            radius: self.radius,
            n_req: self.n_req,
            n_max: self.n_max,
        }
    }
}
