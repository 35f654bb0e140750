use std::fmt;

use capver_core::CoreError;
use capver_flow::FlowError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INTERNAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn flow_code(e: &FlowError) -> u8 {
    match e {
        FlowError::Infeasible { .. } => EXIT_VIOLATION,
        _ => EXIT_VALIDATION,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidInstance(_)
            | CoreError::InvalidDistribution(_)
            | CoreError::OutOfDomain { .. }
            | CoreError::FocBelowRange { .. } => EXIT_VALIDATION,
            CoreError::Flow(f) => flow_code(f),
            _ => EXIT_INTERNAL,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError { code: flow_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(format!("i/o error: {e}"))
    }
}
