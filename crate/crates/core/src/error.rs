use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{func}({x}) is outside the domain x > 0")]
    Domain { func: &'static str, x: f64 },
    #[error("categorical weights must be finite, non-negative and not all zero")]
    InvalidWeights,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed document: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: document {id:?} has no sentences")]
    EmptyDocument { line: usize, id: String },
    #[error("line {line}: unknown feature type {name:?}")]
    UnknownFeatureType { line: usize, name: String },
    #[error("unknown feature type {0:?}")]
    UnknownFeatureName(String),
    #[error("feature set selects no feature types")]
    EmptyFeatureSet,
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("eval fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("split of {docs} documents at fraction {fraction} leaves one side empty")]
    DegenerateSplit { docs: usize, fraction: f64 },
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
}

/// Invalid parameters, detected before any work starts.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("R must be ≥ 1")]
    ZeroRelations,
    #[error("learning-rate parameter {name} must be positive, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("learning-rate exponent c must lie in (1/2, 1], got {0}")]
    InvalidExponent(f64),
    #[error("minibatch size S must be ≥ 1")]
    ZeroMinibatch,
    #[error("estimation sweeps S' must be ≥ 1")]
    ZeroSweeps,
    #[error("iteration count T must be ≥ 1")]
    ZeroIterations,
    #[error("minibatch size S = {s} exceeds corpus size D = {d}")]
    MinibatchTooLarge { s: usize, d: usize },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{0}")]
    Other(String),
}

/// A numerical fault that aborts a run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericalError {
    #[error(
        "non-finite conditional weight at document {doc}, sentence {sentence}, relation {relation}"
    )]
    NonFiniteWeight {
        doc: usize,
        sentence: usize,
        relation: usize,
    },
    #[error("non-finite {metric} at iteration {iteration}")]
    NonFiniteMetric {
        metric: &'static str,
        iteration: usize,
    },
    #[error("Fisher information {value} is not positive for {param}")]
    NonPositiveFisher { param: String, value: f64 },
    #[error("zero predictive probability for document {doc:?}, sentence {sentence}")]
    ZeroProbability { doc: String, sentence: usize },
    #[error("count invariant violated: {0}")]
    CountInvariant(String),
    #[error(transparent)]
    Special(#[from] NumericsError),
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("model file is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Numerical(#[from] NumericalError),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<NumericsError> for Error {
    fn from(e: NumericsError) -> Self {
        Error::Numerical(NumericalError::Special(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
