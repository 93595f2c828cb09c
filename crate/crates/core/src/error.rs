use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed name: {0}")]
    MalformedName(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no route for {0}")]
    NoRoute(String),
    #[error("service not offered: {0}")]
    ServiceUnknown(String),
    /// The event queue drained while sessions were still open.
    #[error("simulation deadlocked with {} unfinished session(s): {}", .0.len(), .0.join(", "))]
    Deadlock(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
