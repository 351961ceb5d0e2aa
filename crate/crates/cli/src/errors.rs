use std::fmt;
use std::path::Path;

use varbayes::VbError;

/// CLI failure split along the exit-code contract: usage problems
/// (bad flags, unreadable or ill-formed input) exit with 2, numeric
/// failures inside a fit exit with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl From<VbError> for CliError {
    fn from(e: VbError) -> Self {
        match e {
            // Rejected before any iteration runs: these point back at the
            // arguments or the data, so they take the usage exit code.
            VbError::Input(_) | VbError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            // Domain and the rest can fire mid-fit (a drifted shape hitting
            // a special function, a singular solve): genuine numeric failures.
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

/// File-system problems are treated as usage errors: they point at the
/// arguments (paths) rather than at the numerics.
pub fn io_usage(path: &Path, action: &str, e: &std::io::Error) -> CliError {
    CliError::Usage(format!("cannot {action} {}: {e}", path.display()))
}
