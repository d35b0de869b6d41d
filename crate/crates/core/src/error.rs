use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: file contains no triples", .0.display())]
    Empty(PathBuf),
    #[error("unknown entity uri {0} in {}", .1.display())]
    UnknownUri(String, PathBuf),
    #[error("{}:{line}: ragged embedding, expected {expected} values but found {found}", path.display())]
    RaggedEmbedding {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{count} entities have no embedding, e.g. {}", sample.join(", "))]
    MissingEmbeddings { count: usize, sample: Vec<String> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: {message}")]
    Invalid { op: &'static str, message: String },
}
