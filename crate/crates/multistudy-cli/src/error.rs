//! CLI error type and its mapping onto process exit codes.
//!
//! Exit codes: 0 success, 2 input error (bad files, schemas, flags, or
//! insufficient data), 3 numerical degeneracy (singular systems, degenerate
//! closed forms, excluded replicates), 4 condition violation (no valid
//! transition bound).

use std::path::Path;

use multistudy::Error as CoreError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NO_TRANSITION: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Anything wrong with what the user handed us: files, formats, flags.
    #[error("{0}")]
    Input(String),

    /// The data was readable but the requested computation degenerated with
    /// no usable transition bound.
    #[error("no valid transition bound: {0}")]
    NoValidTransition(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NoValidTransition(_) => EXIT_NO_TRANSITION,
            CliError::Core(e) => match e {
                CoreError::SingularSystem { .. }
                | CoreError::DegenerateScaling { .. }
                | CoreError::DegenerateSystem { .. }
                | CoreError::ExcessiveExclusions { .. } => EXIT_NUMERICAL,
                CoreError::NoCrossing { .. } => EXIT_NO_TRANSITION,
                _ => EXIT_INPUT,
            },
        }
    }
}

/// Attach the offending path to an IO error.
pub fn io_err(path: &Path, err: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {err}", path.display()))
}
