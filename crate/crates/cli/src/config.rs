//! Flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use thiserror::Error;
use winfty_core::descent::DescentConfig;
use winfty_core::direction::AdmmParams;
use winfty_core::problem::ExperimentId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}` ({reason})")]
    Invalid { key: &'static str, value: String, reason: String },
    #[error("key `{key}`: {reason}")]
    Range { key: &'static str, reason: String },
    #[error("key `{key}`: file {path} does not exist")]
    MissingFile { key: &'static str, path: PathBuf },
    #[error("key `experiment` is required")]
    MissingExperiment,
}

/// Whether each level stops after the step cap or iterates to `t ≤ t_min`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[default]
    Cascade,
    Converge,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cascade => "cascade",
            Mode::Converge => "converge",
        })
    }
}

/// Where the initial reference mesh comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    /// The experiment's generator, optionally at another resolution.
    Generated { n: Option<usize> },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub mesh: MeshSource,
    pub levels: usize,
    pub mode: Mode,
    pub gamma: f64,
    pub t_min_exp: u32,
    pub admm: AdmmParams,
    pub out: PathBuf,
}

pub const KEYS: [&str; 11] = [
    "experiment",
    "mesh.n",
    "mesh.file",
    "levels",
    "mode",
    "gamma",
    "t_min_exp",
    "admm.tau0",
    "admm.tol",
    "admm.max_iter",
    "out",
];

impl RunConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            mesh: MeshSource::Generated { n: None },
            levels: 4,
            mode: Mode::Cascade,
            gamma: 1e-4,
            t_min_exp: 11,
            admm: AdmmParams::default(),
            out: PathBuf::from("results"),
        }
    }

    /// Descent settings for this run.
    pub fn descent(&self) -> DescentConfig {
        DescentConfig {
            gamma: self.gamma,
            t_min_exp: self.t_min_exp,
            levels: self.levels,
            converge: self.mode == Mode::Converge,
            admm: self.admm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key, reason: &str| Err(ConfigError::Range { key, reason: reason.to_string() });
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return range("gamma", "must lie in (0, 1)");
        }
        if self.levels == 0 {
            return range("levels", "must be at least 1");
        }
        if self.t_min_exp == 0 || self.t_min_exp > 60 {
            return range("t_min_exp", "must be in 1..=60");
        }
        if !(self.admm.tau0 > 0.0 && self.admm.tau0.is_finite()) {
            return range("admm.tau0", "must be positive");
        }
        if self.admm.tol.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return range("admm.tol", "must be positive");
        }
        if self.admm.max_iter == 0 {
            return range("admm.max_iter", "must be at least 1");
        }
        if let MeshSource::Generated { n: Some(0) } = self.mesh {
            return range("mesh.n", "must be positive");
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid { key, value: value.to_string(), reason: e.to_string() })
}

/// Parses config text. Relative `mesh.file` paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut entries: Vec<(&'static str, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
            return Err(ConfigError::UnknownKey { line: i + 1, key: key.to_string() });
        };
        if entries.iter().any(|(k, _)| *k == known) {
            return Err(ConfigError::Duplicate { line: i + 1, key: key.to_string() });
        }
        entries.push((known, value.to_string()));
    }

    let experiment = entries
        .iter()
        .find(|(k, _)| *k == "experiment")
        .map(|(_, v)| parse_value::<ExperimentId>("experiment", v))
        .transpose()?
        .ok_or(ConfigError::MissingExperiment)?;
    let mut config = RunConfig::new(experiment);
    let mut mesh_n = None;
    let mut mesh_file = None;
    for (key, value) in &entries {
        let value = value.as_str();
        match *key {
            "experiment" => {}
            "mesh.n" => mesh_n = Some(parse_value::<usize>(key, value)?),
            "mesh.file" => {
                let path = base.join(value);
                if !path.is_file() {
                    return Err(ConfigError::MissingFile { key, path });
                }
                mesh_file = Some(path);
            }
            "levels" => config.levels = parse_value(key, value)?,
            "mode" => {
                config.mode = Mode::from_str(value, true).map_err(|reason| ConfigError::Invalid {
                    key,
                    value: value.to_string(),
                    reason,
                })?
            }
            "gamma" => config.gamma = parse_value(key, value)?,
            "t_min_exp" => config.t_min_exp = parse_value(key, value)?,
            "admm.tau0" => config.admm.tau0 = parse_value(key, value)?,
            "admm.tol" => config.admm.tol = Some(parse_value(key, value)?),
            "admm.max_iter" => config.admm.max_iter = parse_value(key, value)?,
            "out" => config.out = PathBuf::from(value),
            other => unreachable!("key {other} listed but not handled"),
        }
    }
    config.mesh = match (mesh_file, mesh_n) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Range { key: "mesh.n", reason: "cannot be combined with mesh.file".into() })
        }
        (Some(path), None) => MeshSource::File(path),
        (None, n) => MeshSource::Generated { n },
    };
    config.validate()?;
    Ok(config)
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("experiment = exp1").unwrap();
        assert_eq!(c.levels, 4);
        assert_eq!(c.gamma, 1e-4);
        assert_eq!(c.mode, Mode::Cascade);
        assert_eq!(c.t_min_exp, 11);
        assert_eq!(c.mesh, MeshSource::Generated { n: None });
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse("# run\n\nexperiment = exp3   # penalty\nmode = converge\nadmm.tol = 1e-5\n").unwrap();
        assert_eq!(c.mode, Mode::Converge);
        assert_eq!(c.admm.tol, Some(1e-5));
        assert!(c.descent().converge);
    }

    #[test]
    fn errors_name_the_key() {
        let err = parse("experiment = exp1\ngamma = 1.5").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = parse("experiment = exp1\nlevels = two").unwrap_err();
        assert!(err.to_string().contains("levels"), "{err}");
        let err = parse("experiment = exp1\nsolver = cg").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
        let err = parse("experiment = exp1\nmode = fast").unwrap_err();
        assert!(err.to_string().contains("mode"), "{err}");
        assert!(matches!(parse("levels = 2"), Err(ConfigError::MissingExperiment)));
        assert!(matches!(parse("experiment exp1"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(parse("experiment = exp1\nlevels = 1\nlevels = 2"), Err(ConfigError::Duplicate { .. })));
    }

    #[test]
    fn missing_mesh_file_is_rejected() {
        let err = parse("experiment = exp1\nmesh.file = does/not/exist.txt").unwrap_err();
        assert!(matches!(err, ConfigError::MissingFile { key: "mesh.file", .. }));
    }
}
