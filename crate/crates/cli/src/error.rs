use std::path::PathBuf;
use std::process::ExitCode;

use teleop_core::config::ConfigError;
use teleop_core::control::ReplayError;
use teleop_core::metrics::MetricsError;
use teleop_protocol::BindError;
use thiserror::Error;

/// Every failure the CLI reports. Each prints as one line,
/// `error[<code>]: <text>`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: MetricsError },
    #[error("{0}")]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), message: e.to_string() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(ConfigError::Io { .. }) => "config_io",
            CliError::Config(ConfigError::Parse { .. }) => "config_parse",
            CliError::Config(ConfigError::Invalid { .. }) => "config_invalid",
            CliError::Io { .. } => "io",
            CliError::Log { source: MetricsError::SchemaMismatch { .. }, .. } => "schema_mismatch",
            CliError::Log { source: MetricsError::IncompleteLog(_), .. } => "incomplete_log",
            CliError::Log { .. } => "log_io",
            CliError::Replay(ReplayError::Divergence { .. } | ReplayError::Length { .. } | ReplayError::Result { .. }) => {
                "replay_divergence"
            }
            CliError::Replay(ReplayError::HashMismatch { .. }) => "hash_mismatch",
            CliError::Replay(_) => "replay_error",
            CliError::Bind(_) => "bind",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Bind(_) => 3,
            _ => 1,
        }
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("{}", error_line(self.code(), &self.to_string()));
        ExitCode::from(self.exit_code())
    }
}

pub fn error_line(code: &str, text: &str) -> String {
    let mut flat = String::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !flat.is_empty() {
            flat.push_str(if flat.ends_with(':') { " " } else { "; " });
        }
        flat.push_str(line);
    }
    format!("error[{code}]: {flat}")
}
