use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integration diverged at t = {t:.4} s")]
    IntegrationDiverged { t: f64 },
    #[error("joint limit exceeded at t = {t:.4} s: {body} joint {joint} at {angle:.4} rad")]
    JointLimit {
        t: f64,
        body: &'static str,
        joint: usize,
        angle: f64,
    },
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors that signal an unstable closed loop rather than a bug or bad input.
    pub fn is_instability(&self) -> bool {
        matches!(
            self,
            Error::IntegrationDiverged { .. } | Error::JointLimit { .. }
        )
    }
}
