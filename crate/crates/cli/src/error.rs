// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::{Path, PathBuf};

use recunlearn::{Error, ErrorClass};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A library error, optionally tagged with the file being processed.
    Core {
        context: Option<PathBuf>,
        source: Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn in_file(path: &Path, source: Error) -> Self {
        CliError::Core {
            context: Some(path.to_owned()),
            source,
        }
    }

    /// 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Core { source, .. } => match source.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core {
                context: Some(path),
                source,
            } => write!(f, "{}: {source}", path.display()),
            CliError::Core { context: None, source } => write!(f, "{source}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(source: Error) -> Self {
        CliError::Core { context: None, source }
    }
}
