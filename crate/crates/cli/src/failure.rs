use std::fmt;
use std::process::ExitCode;

use flowmine::Error;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 2,
    Data = 3,
    Divergence = 4,
    Budget = 5,
}

/// A failed command: the exit class plus a message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            exit: Exit::Data,
            message: message.into(),
        }
    }

    pub fn budget(message: impl Into<String>) -> Self {
        Failure {
            exit: Exit::Budget,
            message: message.into(),
        }
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(mut self, stage: &str) -> Self {
        self.message = format!("stage `{stage}`: {}", self.message);
        self
    }

    pub fn code(&self) -> ExitCode {
        ExitCode::from(self.exit as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match &e {
            Error::Config(_) => Exit::Usage,
            Error::NonFiniteLoss { .. } => Exit::Divergence,
            Error::BudgetExceeded { .. } => Exit::Budget,
            _ => Exit::Data,
        };
        Failure {
            exit,
            message: e.to_string(),
        }
    }
}
