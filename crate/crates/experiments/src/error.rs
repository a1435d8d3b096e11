use std::io;
use std::path::PathBuf;

use dsgd_core::CoreError;

use crate::validate::Violation;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario violates {} constraint(s): {}", .0.len(), summarize(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl ExperimentError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numerical failures during a run,
    /// 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) | Self::UnknownScenario(_) | Self::Invalid(_) => 2,
            Self::Core(CoreError::Diverged { .. } | CoreError::NonFinite(_)) => 3,
            Self::Core(_) => 2,
            Self::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "invalid_config",
            3 => "divergence",
            _ => "io",
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;
