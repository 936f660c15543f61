use std::path::PathBuf;
use std::process::ExitCode;

use kgdrive_core::config::ConfigError;
use kgdrive_core::engine::{CheckpointError, SacError};
use kgdrive_core::fusion::{FusionTrainError, ProviderError};
use kgdrive_core::graph::{CycleError, GraphError, SnapshotError};
use kgdrive_core::sim::HarnessError;

/// Process exit codes. Kept in sync with the table in the README.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const VALIDATION: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
    pub const TRANSPORT: u8 = 5;
    pub const CELLS_FAILED: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {}", .lines.join("; "))]
    Parse { path: PathBuf, lines: Vec<String> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0} experiment cell(s) failed")]
    CellsFailed(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> u8 {
        use exit::*;
        match self {
            CliError::Io { .. } => OTHER,
            CliError::Parse { .. } => PARSE,
            CliError::Invalid(_) | CliError::Graph(_) => VALIDATION,
            CliError::Config(ConfigError::Io(_)) => OTHER,
            CliError::Config(ConfigError::Parse(_)) => PARSE,
            CliError::Config(ConfigError::Invalid(_)) => VALIDATION,
            CliError::Snapshot(SnapshotError::Io(_)) | CliError::Checkpoint(CheckpointError::Io(_)) => OTHER,
            CliError::Snapshot(_) | CliError::Checkpoint(_) => PARSE,
            CliError::Provider(_) | CliError::Cycle(CycleError::Provider { .. }) => TRANSPORT,
            CliError::Cycle(CycleError::Graph(_)) => VALIDATION,
            CliError::Harness(h) => match h {
                HarnessError::Provider(_) | HarnessError::Fusion(FusionTrainError::Provider(_)) => TRANSPORT,
                HarnessError::Fusion(FusionTrainError::Divergence { .. }) | HarnessError::Sac(SacError::Divergence { .. }) => {
                    DIVERGENCE
                }
                HarnessError::Scenario(_) | HarnessError::Graph(_) | HarnessError::Catalog(_) | HarnessError::Mismatch(_) => {
                    VALIDATION
                }
                _ => OTHER,
            },
            CliError::CellsFailed(_) => CELLS_FAILED,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

#[cfg(test)]
mod tests {
    use super::exit::*;

    #[test]
    fn exit_codes_are_distinct() {
        let mut codes = vec![OK, OTHER, PARSE, VALIDATION, DIVERGENCE, TRANSPORT, CELLS_FAILED];
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 7);
    }
}
