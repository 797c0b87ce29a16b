//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Malformed sparse payloads, either built in memory or decoded from bytes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("bad magic: expected \"CRS1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error("entry count {count} exceeds dimension {dim}")]
    EntryCountExceedsDim { count: usize, dim: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("indices not increasing: {prev} followed by {next}")]
    NonIncreasingIndices { prev: usize, next: usize },
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("non-finite threshold")]
    NonFiniteThreshold,
    #[error("index and value lists differ in length ({indices} vs {values})")]
    LengthMismatch { indices: usize, values: usize },
    #[error("dimension {0} does not fit the wire format")]
    DimensionTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("input gradient has a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("sampling size {k} must satisfy 1 <= K < d = {dim}")]
    InvalidSampleSize { k: usize, dim: usize },
    #[error("sampling probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("inclusion probability vanished for selected coordinate {index} (threshold {threshold})")]
    InclusionUnderflow { index: usize, threshold: f64 },
    #[error("residual has length {residual}, gradient has length {dim}")]
    ResidualMismatch { residual: usize, dim: usize },
    #[error("{0} probabilities supplied for a gradient of length {1}")]
    ProbabilityLengthMismatch(usize, usize),
    #[error("CRS requires a privacy budget epsilon")]
    MissingEpsilon,
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("sampling probability {p} outside (0, {max}]")]
    ProbabilityOutOfRange { p: f64, max: f64 },
    #[error("Bernoulli parameter {0} outside the open interval (0, 1)")]
    DegenerateBernoulli(f64),
    #[error("rate {0} outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("K = {k} exceeds d = {d}")]
    SampleSizeExceedsDim { k: usize, d: usize },
    #[error("Laplace scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("certificate refused: {0}")]
    Refused(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        file: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{file}: truncated, need {needed} bytes, have {available}")]
    Truncated {
        file: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at row {row} outside [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite feature in row {0}")]
    NonFiniteFeature(usize),
    #[error("feature matrix has {len} values, expected {rows} x {cols}")]
    ShapeMismatch { len: usize, rows: usize, cols: usize },
    #[error("invalid dataset parameters: {0}")]
    InvalidParameters(String),
    #[error("cannot split {n} samples among {m} clients")]
    TooManyClients { m: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("weight vector has length {found}, architecture needs {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error("dataset has {found} features, model expects {expected}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("dataset has {found} classes, model expects {expected}")]
    ClassMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite activation or loss")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no updates to aggregate")]
    EmptyAggregate,
    #[error("training diverged at round {round}: loss {loss} (initial {initial})")]
    Diverged { round: usize, loss: f64, initial: f64 },
    #[error("worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("overall transmission must be positive, got {0}")]
    NonPositiveTransmission(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(String),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: cannot parse `{value}` as {expected}")]
    TypeMismatch {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}
