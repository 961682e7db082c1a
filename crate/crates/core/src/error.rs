use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("index covariate u is constant ({0}); no interval to smooth over")]
    DegenerateIndex(f64),

    #[error("dataset has no clusters")]
    EmptyDataset,

    #[error("insufficient local data at u = {u0}: {support} weighted rows, need {required}")]
    InsufficientLocalData {
        u0: f64,
        support: usize,
        required: usize,
    },

    #[error("local normal equations singular at u = {u0} (condition estimate {condition:.3e})")]
    SingularSystem { u0: f64, condition: f64 },

    #[error("kernel quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("no cluster usable for variance components (need n_i > p and invertible x_i'x_i)")]
    NoUsableClusters,

    #[error("invalid interval: bandwidth {h} must be smaller than b - a = {width}")]
    InvalidInterval { h: f64, width: f64 },

    #[error("jackknife needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cluster {cluster}: covariate {column} differs between rows ({first} vs {other})")]
    InconsistentClusterCovariate {
        cluster: String,
        column: String,
        first: f64,
        other: f64,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::DegenerateIndex(_) => "DegenerateIndex",
            Error::EmptyDataset => "EmptyDataset",
            Error::InsufficientLocalData { .. } => "InsufficientLocalData",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::NoUsableClusters => "NoUsableClusters",
            Error::InvalidInterval { .. } => "InvalidInterval",
            Error::TooFewClusters(_) => "TooFewClusters",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Schema(_) => "Schema",
            Error::InconsistentClusterCovariate { .. } => "InconsistentClusterCovariate",
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } => "IoError",
            Error::Stage { source, .. } => source.kind(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
