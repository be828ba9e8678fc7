//! Config-file lookup and flag/config/default resolution.

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "DMD_L2O_DATA_DIR";

/// Keys accepted in a config file.
const KNOWN_KEYS: &[&str] = &[
    "task",
    "optimizer",
    "checkpoint",
    "rank",
    "snapshots",
    "steps",
    "epochs",
    "unroll",
    "meta-lr",
    "eval-every",
    "eval-instances",
    "train-limit",
    "keep-history",
    "runs",
    "lr",
    "split",
    "seed",
    "jobs",
    "data-dir",
    "out-dir",
    "input",
    "modes",
];

/// Flat key-value settings read from a TOML file. Empty when no file is given.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
    origin: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!(
                "{}: unknown key `{key}`; known keys: {}",
                origin.display(),
                KNOWN_KEYS.join(", ")
            )));
        }
        Ok(ConfigFile {
            table,
            origin: Some(origin.to_path_buf()),
        })
    }

    fn type_error(&self, key: &str, expected: &str) -> CliError {
        let origin = self.origin.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
        CliError::Usage(format!("{origin}: key `{key}` must be {expected}"))
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.type_error(key, "a string")),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.type_error(key, "a non-negative integer")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.u64(key)?
            .map(|v| usize::try_from(v).map_err(|_| self.type_error(key, "a smaller integer")))
            .transpose()
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.type_error(key, "a number")),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.type_error(key, "true or false")),
        }
    }
}

/// Flag first, then config file, then the built-in default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Data directory: flag, config, environment, then `./data`.
pub fn data_dir(flag: Option<PathBuf>, config: &ConfigFile) -> Result<PathBuf, CliError> {
    let env = std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    Ok(flag.or(config.path("data-dir")?).or(env).unwrap_or_else(|| PathBuf::from("data")))
}
