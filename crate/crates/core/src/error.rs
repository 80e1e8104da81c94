use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Parameters or buffer shapes that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Frame assembly or payload recovery failed.
    #[error("frame error: {0}")]
    Frame(String),
    /// The receiver could not lock onto a frame.
    #[error("sync failure in {stage}: {reason}")]
    Sync { stage: &'static str, reason: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn frame(msg: impl Into<String>) -> Self {
        Error::Frame(msg.into())
    }

    pub(crate) fn sync(stage: &'static str, reason: impl Into<String>) -> Self {
        Error::Sync {
            stage,
            reason: reason.into(),
        }
    }
}
