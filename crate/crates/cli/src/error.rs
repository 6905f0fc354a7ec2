//! CLI error with its process exit code.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 empty database.

use retseg_core::Error as CoreError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_EMPTY_DB: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self {
            code: EXIT_CONFIG,
            message,
        }
    }

    pub fn data(message: String) -> Self {
        Self {
            code: EXIT_DATA,
            message,
        }
    }

    /// A core error raised while interpreting configuration.
    pub fn from_config_error(e: CoreError) -> Self {
        Self::config(e.to_string())
    }

    /// Attach file context to a core error, keeping its exit-code class.
    pub fn in_file(path: &std::path::Path, e: CoreError) -> Self {
        Self {
            code: exit_code_for(&e),
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn exit_code_for(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidConfig(_) | CoreError::InvalidName(_) => EXIT_CONFIG,
        CoreError::NoRecords => EXIT_EMPTY_DB,
        CoreError::AtIndex { source, .. } => exit_code_for(source),
        _ => EXIT_DATA,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        Self {
            code: exit_code_for(&e),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}
