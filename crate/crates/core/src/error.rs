use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("{count} invalid rows; first: {first}")]
    RejectedRows { count: usize, first: String },
    #[error("adjacency: {0}")]
    Adjacency(String),
    #[error("period grid: {0}")]
    Grid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model specification: {0}")]
    Spec(String),
    #[error("matrix not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("optimizer did not converge after {iterations} iterations (best objective {best_value})")]
    NoConvergence {
        iterations: usize,
        best_value: f64,
        best_point: Vec<f64>,
    },
    #[error("hessian of the log hyperposterior is not positive definite; eigenvalues {0:?}")]
    IndefiniteHessian(Vec<f64>),
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
