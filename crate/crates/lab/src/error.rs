use std::fmt;
use std::io;
use std::path::PathBuf;

use sharplab_core::model::ModelError;
use sharplab_core::optim::OptimError;
use sharplab_core::quadlab::QuadError;
use sharplab_core::spectral::SpectralError;

use crate::idx::IdxError;

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Model(ModelError),
    Optim(OptimError),
    Spectral(SpectralError),
    Quad(QuadError),
    Idx(IdxError),
    Io { path: PathBuf, source: io::Error },
    Format(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "invalid config: {m}"),
            HarnessError::Model(e) => write!(f, "{e}"),
            HarnessError::Optim(e) => write!(f, "{e}"),
            HarnessError::Spectral(e) => write!(f, "{e}"),
            HarnessError::Quad(e) => write!(f, "{e}"),
            HarnessError::Idx(e) => write!(f, "{e}"),
            HarnessError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            HarnessError::Format(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            HarnessError::Io { source, .. } => Some(source),
            HarnessError::Idx(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        HarnessError::Model(e)
    }
}

impl From<OptimError> for HarnessError {
    fn from(e: OptimError) -> Self {
        HarnessError::Optim(e)
    }
}

impl From<SpectralError> for HarnessError {
    fn from(e: SpectralError) -> Self {
        HarnessError::Spectral(e)
    }
}

impl From<QuadError> for HarnessError {
    fn from(e: QuadError) -> Self {
        HarnessError::Quad(e)
    }
}

impl From<IdxError> for HarnessError {
    fn from(e: IdxError) -> Self {
        HarnessError::Idx(e)
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
