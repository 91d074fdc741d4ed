use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the algorithm stack.
///
/// Variants are grouped by the stage that raises them; [`Error::is_config`]
/// separates configuration mistakes from domain failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field spec: {0}")]
    InvalidSpec(String),
    #[error("undefined index: {0}")]
    UndefinedIndex(&'static str),
    #[error("no pattern: {0}")]
    NoPattern(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("dangling constraint: node {0} is not in the graph")]
    DanglingConstraint(u64),
    #[error("gauge freedom: {0}")]
    GaugeFreedom(String),
    #[error("ordering: {0}")]
    Ordering(String),
    #[error("no flow: {0}")]
    NoFlow(String),
    #[error("registration unreliable: {0}")]
    RegistrationUnreliable(String),
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    #[error("insufficient structure: {0}")]
    InsufficientStructure(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("exhausted workspace: {0}")]
    ExhaustedWorkspace(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("malformed task tree: {0}")]
    Structural(String),
    #[error("not reachable: {0}")]
    NotReachable(String),
    #[error("out of reach: {0}")]
    OutOfReach(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by the scenario or input files rather than by
    /// the algorithms themselves.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::InvalidSpec(_)
        )
    }
}
