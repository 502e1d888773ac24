use std::fmt;
use std::path::Path;

use stereo_core::{CalibError, DepthError, ImageError, ParamError, SgmError, TargetError};

/// A command failure. I/O and file-format problems exit with 1, rejected
/// inputs and parameters with 2.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    Invalid(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Failure {
        Failure::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) | Failure::Invalid(m) => f.write_str(m),
        }
    }
}

impl From<ParamError> for Failure {
    fn from(e: ParamError) -> Self {
        match e {
            ParamError::Format(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<CalibError> for Failure {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::Format(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<TargetError> for Failure {
    fn from(e: TargetError) -> Self {
        match e {
            TargetError::Parse(_) | TargetError::Image(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<DepthError> for Failure {
    fn from(e: DepthError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SgmError> for Failure {
    fn from(e: SgmError) -> Self {
        match e {
            SgmError::Param(p) => p.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}
