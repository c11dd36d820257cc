use std::path::{Path, PathBuf};

use shadowcast::analysis::AnalysisError;
use shadowcast::curvefit::{CurveFitError, SeriesError};
use shadowcast::imaging::ImagingError;
use shadowcast::photophysics::PhysicsError;
use thiserror::Error;

/// Failure of a command, classified by exit code: 1 configuration, 2 analysis
/// or fit non-convergence, 3 input/output.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::NotConverged(_) => 2,
            Self::Io { .. } => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<PhysicsError> for CliError {
    fn from(e: PhysicsError) -> Self {
        Self::Config(e.to_string())
    }
}

/// Parameter and geometry errors are configuration errors; everything else a
/// scene can raise comes from reading or writing files.
impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::InvalidParameter { .. } | ImagingError::FieldOfView { .. } | ImagingError::Physics(_) => {
                Self::Config(e.to_string())
            }
            other => Self::Io {
                path: PathBuf::new(),
                message: other.to_string(),
            },
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::BadRadius { .. } | AnalysisError::BadBandpass { .. } => Self::Config(e.to_string()),
            other => Self::NotConverged(other.to_string()),
        }
    }
}

impl From<CurveFitError> for CliError {
    fn from(e: CurveFitError) -> Self {
        match e {
            CurveFitError::Physics(p) => p.into(),
            CurveFitError::Imaging(i) => i.into(),
            CurveFitError::Analysis(a) => a.into(),
            CurveFitError::Series(s) => s.into(),
            other => Self::NotConverged(other.to_string()),
        }
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        Self::Io {
            path: PathBuf::new(),
            message: e.to_string(),
        }
    }
}
