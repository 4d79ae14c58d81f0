use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad arguments, configuration or input files.
    Input,
    /// A numerical stage failed on valid input.
    Solver,
}

/// A failed command: what kind, which stage, and the error chain.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    pub source: anyhow::Error,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: ErrorKind,
    stage: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn input(stage: &'static str, source: impl Into<anyhow::Error>) -> Self {
        Self { kind: ErrorKind::Input, stage, source: source.into() }
    }

    pub fn solver(stage: &'static str, source: impl Into<anyhow::Error>) -> Self {
        Self { kind: ErrorKind::Solver, stage, source: source.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input => 2,
            ErrorKind::Solver => 3,
        }
    }

    /// One-line JSON for standard error.
    pub fn to_json(&self) -> String {
        let body = ErrorJson { error: self.kind, stage: self.stage, message: format!("{:#}", self.source), exit_code: self.exit_code() };
        serde_json::to_string(&body).expect("error JSON serialises")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
