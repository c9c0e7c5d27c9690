use std::path::PathBuf;

use thiserror::Error;

use crate::correct::CorrectError;
use crate::detect::DetectError;
use crate::gmm::GmmError;
use crate::iforest::ForestError;
use crate::perspectives::FeatureError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error surfaced by the pipeline and the CLI.
///
/// Every variant renders as a single line that names what to fix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} in {}: {message}", path.display())]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error(transparent)]
    Feature(#[from] FeatureError),

    #[error(transparent)]
    Gmm(#[from] GmmError),

    #[error(transparent)]
    Forest(#[from] ForestError),

    #[error(transparent)]
    Detect(#[from] DetectError),

    #[error(transparent)]
    Correct(#[from] CorrectError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by the invocation rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
