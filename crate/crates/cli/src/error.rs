use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a run, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Exit code 4.
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

macro_rules! numerical {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        })*
    };
}

numerical!(
    shk_core::models::ModelError,
    shk_core::langevin::LangevinError,
    shk_core::lorentz::LorentzError,
    shk_core::micro::MicroError,
    shk_core::coarse::CoarseError,
    shk_core::phase::PhaseError
);
