use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    ConfigLine { path: String, line: usize, msg: String },

    #[error("{0}")]
    Runtime(String),

    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Overwrite(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigLine { .. } => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
            CliError::Overwrite(_) => 4,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<tclswarm_core::Error> for CliError {
    fn from(e: tclswarm_core::Error) -> Self {
        use tclswarm_core::Error as E;
        match e {
            E::InvalidParams(_)
            | E::Infeasible(_)
            | E::StepSize { .. }
            | E::EmptyPopulation
            | E::Stability { .. }
            | E::Config(_)
            | E::Domain(_)
            | E::DegenerateScaler(_) => CliError::Config(e.to_string()),
            E::Shape { .. } | E::Resolution(_) | E::ZeroBaseline(_) | E::ModelCorrupt(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
