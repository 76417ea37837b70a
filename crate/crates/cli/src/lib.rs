//! Command implementations behind the `rednet` binary.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and file-format
//! problems, 3 for missing data and runtime failures.

pub mod ablation;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rednet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rednet::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Config(_) | E::Format(_) | E::Geometry(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

/// Sizes the global thread pool from `REDNET_THREADS` when it is set.
pub fn init_threads(var: Option<&str>) -> Result<(), CliError> {
    let Some(v) = var else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("REDNET_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(rednet::Error::Format("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(rednet::Error::Data("x".into())).exit_code(), 3);
    }

    #[test]
    fn thread_variable_must_be_positive() {
        assert!(init_threads(Some("0")).is_err());
        assert!(init_threads(Some("many")).is_err());
        assert!(init_threads(None).is_ok());
    }
}
