use std::fmt;

use dmd_l2o::datasets::DatasetError;
use dmd_l2o::meta_train::MetaTrainError;
use dmd_l2o::optimizer_net::CheckpointError;

/// Process exit codes.
pub const EXIT_IO: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;

/// A user-facing failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(err: DatasetError) -> Self {
        match err {
            DatasetError::Io { .. } => CliError::Io(err.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(err: CheckpointError) -> Self {
        match err {
            CheckpointError::Io { .. } => CliError::Io(err.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetaTrainError> for CliError {
    fn from(err: MetaTrainError) -> Self {
        match err {
            MetaTrainError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}
