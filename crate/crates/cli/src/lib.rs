//! Command-line front end for `equitopo`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 topology
//! construction failure, 4 divergence.

pub mod commands;
pub mod config;

use std::ffi::OsString;

pub use config::{parse_args, Cmd, Config};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Help or version output requested; not an error for the caller.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Construction(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Construction(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

/// Maps library parameter names onto flag names.
fn flag_name(name: &str) -> String {
    match name {
        "r" => "reg".to_string(),
        other => other.replace('_', "-"),
    }
}

impl From<equitopo::Error> for CliError {
    fn from(e: equitopo::Error) -> Self {
        use equitopo::Error as E;
        match e {
            E::Parameter { name, reason } => {
                CliError::Usage(format!("invalid value for `{}`: {reason}", flag_name(name)))
            }
            E::Parse(_) | E::Dimension { .. } => CliError::Usage(e.to_string()),
            E::ConstructionFailed { ref best_basis, .. } => {
                CliError::Construction(format!("{e} (best basis {best_basis:?})"))
            }
            E::NonFinite { .. } => CliError::Diverged(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        use clap::error::ErrorKind;
        let text = e.render().to_string();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(text),
            // Bare `equitopo` prints help but is still a usage error.
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                CliError::Usage(format!("missing command\n\n{}", text.trim_end()))
            }
            _ => CliError::Usage(text.trim_end().to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Summaries go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_args(args).and_then(|cfg| commands::run_command(&cfg));
    match result {
        Ok(()) => 0,
        Err(CliError::Info(text)) => {
            print!("{text}");
            0
        }
        Err(e) => {
            let text = e.to_string();
            if text.starts_with("error:") {
                eprintln!("{text}");
            } else {
                eprintln!("error: {text}");
            }
            e.exit_code()
        }
    }
}
