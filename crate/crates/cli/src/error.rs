use std::path::PathBuf;

use mpf_core::autodiff::ContainerError;
use mpf_core::envs::{EnvError, SpecError};
use mpf_core::sac::SacError;
use mpf_core::selection::SelectionError;
use mpf_core::tpe::TpeError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("missing prerequisite artifact `{}`; run the earlier phase first", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", .path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("expected {expected} candidate files in {}, found {found}", .dir.display())]
    CandidateCount {
        dir: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("rerun produced different content for `{0}` than the manifest records")]
    HashMismatch(String),
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("{0}")]
    Train(#[from] SacError),
    #[error("{0}")]
    Selection(#[from] SelectionError),
    #[error("{0}")]
    Generation(#[from] TpeError),
    #[error("{0}")]
    Env(#[from] EnvError),
    #[error("{0}")]
    Spec(#[from] SpecError),
    #[error("{0}")]
    Container(#[from] ContainerError),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T, CliError>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })
    }
}
