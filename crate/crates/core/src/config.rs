//! Pipeline tunables and the flat `key = value` configuration format.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::DEFAULT_CONFIDENCE;
use crate::dictionary::{DEFAULT_K_BACKGROUND, DEFAULT_K_TARGET, DEFAULT_WINDOW};
use crate::screening::Thresholds;
use crate::sparse::{Method, SolverConfig};
use crate::waveform::Family;

/// Random background windows drawn per training record and family.
pub const DEFAULT_RANDOM_BACKGROUND: usize = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub thresholds: Thresholds,
    pub solver: SolverConfig,
    pub conf_th: f64,
    pub w_class: usize,
    pub k_target: usize,
    pub k_background: usize,
    pub seed: u64,
    pub random_background: usize,
    /// Explicit dictionary file per family; others resolve inside a directory.
    pub dictionaries: BTreeMap<Family, PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            solver: SolverConfig::default(),
            conf_th: DEFAULT_CONFIDENCE,
            w_class: DEFAULT_WINDOW,
            k_target: DEFAULT_K_TARGET,
            k_background: DEFAULT_K_BACKGROUND,
            seed: 0,
            random_background: DEFAULT_RANDOM_BACKGROUND,
            dictionaries: BTreeMap::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{value}` is not a valid value for {key}"))
}

impl PipelineConfig {
    pub fn lambda(&self) -> f64 {
        self.solver.lambda
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let th = &mut self.thresholds;
        match key {
            "v_status" => th.v_status = parse_num(key, value)?,
            "v_pulse" => th.v_pulse = parse_num(key, value)?,
            "i_status" => th.i_status = parse_num(key, value)?,
            "i_pulse" => th.i_pulse = parse_num(key, value)?,
            "status_window" => th.status_window = parse_num(key, value)?,
            "pulse_window" => th.pulse_window = parse_num(key, value)?,
            "debounce" => th.debounce = parse_num(key, value)?,
            "lambda" => self.solver.lambda = parse_num(key, value)?,
            "max_iter" => self.solver.max_iter = parse_num(key, value)?,
            "tol_kkt" => self.solver.tol_kkt = parse_num(key, value)?,
            "tol_obj" => self.solver.tol_obj = parse_num(key, value)?,
            "solver" => {
                self.solver.method = match value {
                    "cd" | "coordinate_descent" => Method::CoordinateDescent,
                    "fista" => Method::Fista,
                    _ => return Err(format!("unknown solver `{value}` (cd or fista)")),
                }
            }
            "conf_th" => self.conf_th = parse_num(key, value)?,
            "w_class" => self.w_class = parse_num(key, value)?,
            "k_target" => self.k_target = parse_num(key, value)?,
            "k_background" => self.k_background = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "random_background" => self.random_background = parse_num(key, value)?,
            _ => {
                let family = key
                    .strip_prefix("dict_")
                    .and_then(|f| Family::ALL.into_iter().find(|fam| fam.name() == f))
                    .ok_or_else(|| format!("unknown key `{key}`"))?;
                self.dictionaries.insert(family, PathBuf::from(value));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message| ConfigError::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.thresholds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.conf_th.is_finite() && (0.0..=1.0).contains(&self.conf_th)) {
            return invalid(format!("conf_th {} must lie in [0, 1]", self.conf_th));
        }
        if self.w_class == 0 || self.k_target == 0 || self.k_background == 0 {
            return invalid("w_class, k_target and k_background must be positive".into());
        }
        Ok(())
    }

    /// Renders every setting in the file format, dictionaries last.
    pub fn to_text(&self) -> String {
        let th = &self.thresholds;
        let method = match self.solver.method {
            Method::CoordinateDescent => "cd",
            Method::Fista => "fista",
        };
        let mut s = format!(
            "v_status = {:?}\nv_pulse = {:?}\ni_status = {:?}\ni_pulse = {:?}\n\
             status_window = {}\npulse_window = {}\ndebounce = {}\n\
             lambda = {:?}\nmax_iter = {}\ntol_kkt = {:?}\ntol_obj = {:?}\nsolver = {method}\n\
             conf_th = {:?}\nw_class = {}\nk_target = {}\nk_background = {}\nseed = {}\nrandom_background = {}\n",
            th.v_status,
            th.v_pulse,
            th.i_status,
            th.i_pulse,
            th.status_window,
            th.pulse_window,
            th.debounce,
            self.solver.lambda,
            self.solver.max_iter,
            self.solver.tol_kkt,
            self.solver.tol_obj,
            self.conf_th,
            self.w_class,
            self.k_target,
            self.k_background,
            self.seed,
            self.random_background,
        );
        for (family, path) in &self.dictionaries {
            s.push_str(&format!("dict_{} = {}\n", family.name(), path.display()));
        }
        s
    }

    /// Dictionary path for `family`: the explicit setting, else
    /// `<dir>/<family>.json`.
    pub fn dictionary_path(&self, family: Family, dir: Option<&Path>) -> Option<PathBuf> {
        self.dictionaries
            .get(&family)
            .cloned()
            .or_else(|| dir.map(|d| d.join(dictionary_file_name(family))))
    }
}

pub fn dictionary_file_name(family: Family) -> String {
    format!("{}.json", family.name())
}
