//! Error classes and their process exit codes.

use std::fmt;

use fecund_core::coder_client::CoderError;
use fecund_core::corpus_model::ModelError;
use fecund_core::ingest::IngestError;
use fecund_core::saturation::SaturationError;
use fecund_core::selection::SelectionError;
use fecund_core::stats::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config,
    Io,
    Data,
    Compute,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        match self {
            ExitClass::Config => 3,
            ExitClass::Io => 4,
            ExitClass::Data => 5,
            ExitClass::Compute => 6,
        }
    }
}

impl fmt::Display for ExitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExitClass::Config => "configuration error",
            ExitClass::Io => "I/O error",
            ExitClass::Data => "data error",
            ExitClass::Compute => "computation error",
        })
    }
}

/// Class of the first tag found in the error chain; untagged errors are I/O.
pub fn classify(err: &anyhow::Error) -> ExitClass {
    err.downcast_ref::<ExitClass>().copied().unwrap_or(ExitClass::Io)
}

impl std::error::Error for ExitClass {}

pub trait Classify<T> {
    fn class(self, class: ExitClass) -> anyhow::Result<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn class(self, class: ExitClass) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(class))
    }
}

/// Tags library errors with the class they belong to.
pub trait Tagged<T> {
    fn tagged(self) -> anyhow::Result<T>;
}

fn tag<T, E: Into<anyhow::Error>>(r: Result<T, E>, class: ExitClass) -> anyhow::Result<T> {
    r.class(class)
}

impl<T> Tagged<T> for Result<T, IngestError> {
    fn tagged(self) -> anyhow::Result<T> {
        let class = match &self {
            Err(IngestError::Io { .. }) => ExitClass::Io,
            _ => ExitClass::Data,
        };
        tag(self, class)
    }
}

impl<T> Tagged<T> for Result<T, ModelError> {
    fn tagged(self) -> anyhow::Result<T> {
        tag(self, ExitClass::Data)
    }
}

impl<T> Tagged<T> for Result<T, StatsError> {
    fn tagged(self) -> anyhow::Result<T> {
        let class = match &self {
            Err(StatsError::Io { .. }) => ExitClass::Io,
            Err(StatsError::MissingVariable { .. }) | Err(StatsError::Model(_)) => ExitClass::Data,
            _ => ExitClass::Compute,
        };
        tag(self, class)
    }
}

impl<T> Tagged<T> for Result<T, SelectionError> {
    fn tagged(self) -> anyhow::Result<T> {
        let class = match &self {
            Err(SelectionError::Unknown(_)) | Err(SelectionError::ZeroBudget) => ExitClass::Config,
            _ => ExitClass::Compute,
        };
        tag(self, class)
    }
}

impl<T> Tagged<T> for Result<T, SaturationError> {
    fn tagged(self) -> anyhow::Result<T> {
        let class = match &self {
            Err(SaturationError::Unknown(_)) | Err(SaturationError::BadThreshold(_)) | Err(SaturationError::ZeroWindow) => {
                ExitClass::Config
            }
            Err(SaturationError::MissingThemeMap(_)) | Err(SaturationError::Model(_)) => ExitClass::Data,
            _ => ExitClass::Compute,
        };
        tag(self, class)
    }
}

impl<T> Tagged<T> for Result<T, CoderError> {
    fn tagged(self) -> anyhow::Result<T> {
        let class = match &self {
            Err(CoderError::Input { .. }) => ExitClass::Io,
            Err(CoderError::Unbound { .. }) => ExitClass::Config,
            _ => ExitClass::Compute,
        };
        tag(self, class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_survive_context() {
        let r: Result<(), std::io::Error> = Err(std::io::Error::other("x"));
        let e = r.class(ExitClass::Data).map_err(|e| e.context("outer")).unwrap_err();
        assert_eq!(classify(&e), ExitClass::Data);
        assert_eq!(classify(&anyhow::anyhow!("plain")), ExitClass::Io);
    }
}
