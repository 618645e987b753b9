use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("stage `{stage}`: missing input {}", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },

    #[error("stage `{stage}`: {source}")]
    Data {
        stage: &'static str,
        #[source]
        source: fatigue_core::Error,
    },

    #[error("stage `{stage}`: {message}")]
    Internal { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::MissingInput { .. } | Self::Data { .. } => 2,
            Self::Internal { .. } => 3,
        }
    }

    /// Configuration problems surfacing inside a stage are usage errors.
    pub fn from_core(stage: &'static str, source: fatigue_core::Error) -> Self {
        match source {
            fatigue_core::Error::Config(m) => Self::Usage(format!("stage `{stage}`: invalid configuration: {m}")),
            source => Self::Data { stage, source },
        }
    }
}
