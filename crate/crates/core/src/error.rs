use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while reading Triangle-format mesh files or validating a mesh.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("node index {0} out of range")]
    InvalidNode(usize),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

impl MeshError {
    pub(crate) fn parse(file: &'static str, line: usize, msg: impl Into<String>) -> Self {
        MeshError::Parse {
            file,
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("landscape: {0}")]
    Landscape(String),
    #[error("abm: {0}")]
    Abm(String),
    #[error(
        "pde: linear solve failed after {iterations} iterations (relative residual {residual:.3e})"
    )]
    LinearSolve { iterations: usize, residual: f64 },
    #[error("pde: {0}")]
    Pde(String),
    #[error("coupling: {0}")]
    Coupling(String),
    #[error("langevin: {0}")]
    Langevin(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("synthetic data: {0}")]
    Synth(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {cause}", path.display())]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }
}
