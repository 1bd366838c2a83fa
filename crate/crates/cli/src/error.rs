use std::fmt;
use std::process::ExitCode;

use genadapt::data::DataError;
use genadapt::eval::EvalError;
use genadapt::optim::{CheckpointError, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Failed = 1,
    Io = 2,
    Usage = 64,
}

impl From<Code> for ExitCode {
    fn from(c: Code) -> Self {
        ExitCode::from(c as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self { code: Code::Usage, error: anyhow::anyhow!("{msg}") }
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        Self { code: Code::Io, error: anyhow::anyhow!("{msg}") }
    }

    pub fn context(mut self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: Code::Io, error: e.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::Split(_) | DataError::ToySpec(_) | DataError::Vocab(_) => Code::Usage,
            DataError::Label(_) | DataError::Model(_) => Code::Failed,
            _ => Code::Io,
        };
        Self { code, error: e.into() }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self { code: Code::Io, error: e.into() }
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        let code = match &e {
            OptimError::Config(_) | OptimError::Recipe(_) | OptimError::Incompatible(_) => Code::Usage,
            OptimError::Checkpoint(_) => Code::Io,
            _ => Code::Failed,
        };
        Self { code, error: e.into() }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::UnknownId(_) | EvalError::Json(_) => Code::Io,
            _ => Code::Failed,
        };
        Self { code, error: e.into() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
