//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data, configuration or missing artifacts.
    Data,
    /// Failures while running a model or a backend.
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    // -- dataset --
    #[error("unknown WVS id `{0}`")]
    UnknownWvsId(String),
    #[error("scenario {id}: {reason}")]
    InvalidMapping { id: String, reason: String },
    #[error("scenario {id}: {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("duplicate scenario id `{0}`")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("generation prompt needs at least one {0}")]
    EmptyConfig(&'static str),
    #[error("no scenarios on axis {0}")]
    EmptyAxis(String),
    #[error("invalid question code `{0}`")]
    InvalidQid(String),
    #[error("invalid axis `{0}`")]
    InvalidAxis(String),
    #[error("dataset does not match the canonical layout ({0} problems)")]
    LayoutMismatch(usize),

    // -- model --
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed weights file: {0}")]
    WeightsFormat(String),
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("generation produced no tokens before EOS")]
    EmptyContinuation,
    #[error("option letter `{0}` does not resolve to a single token")]
    UnresolvableLetter(String),
    #[error("backend error: {0}")]
    Backend(String),

    // -- persona --
    #[error("country name is empty")]
    EmptyCountry,
    #[error("variable {0} missing from country stats or codebook")]
    MissingVariable(String),
    #[error("no persona name configured for {0}")]
    MissingName(String),
    #[error("mean {mean} for {variable} lies outside its codebook range")]
    MeanOutOfRange { variable: String, mean: f64 },
    #[error("invalid codebook entry for {0}")]
    InvalidCodebook(String),

    // -- probing --
    #[error("non-finite logit")]
    NonFiniteLogit,
    #[error("probe result refers to unknown scenario `{0}`")]
    DanglingScenario(String),
    #[error("no WVS range configured for {0}")]
    MissingRange(String),

    // -- steering --
    #[error("no contrastive pairs to extract from")]
    EmptyPairs,
    #[error("alpha must be non-zero for a layer search")]
    ZeroAlpha,
    #[error("|alpha| = {alpha} exceeds the cap of {cap}; pass force to override")]
    AlphaOverCap { alpha: f64, cap: f64 },
    #[error("no steering vector for layer {0}")]
    MissingLayerVector(usize),
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("no layers given")]
    EmptyLayers,

    // -- analysis --
    #[error("intended shift is zero; entanglement is undefined")]
    ZeroIntendedShift,
    #[error("no questions for axis {0}")]
    AxisWithoutQuestions(String),
    #[error("unknown country `{0}`")]
    UnknownCountry(String),
    #[error("domain {0} missing")]
    MissingDomain(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("prompt list is empty")]
    EmptyPrompts,
    #[error("alpha list must contain 0")]
    MissingZeroAlpha,
    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("scenario {id}: {source}")]
    InScenario {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::TokenOutOfRange { .. }
            | Error::SequenceTooLong { .. }
            | Error::EmptySequence
            | Error::EmptyContinuation
            | Error::UnresolvableLetter(_)
            | Error::Backend(_) => ErrorKind::Runtime,
            Error::InScenario { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    /// Attach the id of the scenario being processed.
    pub fn in_scenario(self, id: &str) -> Self {
        match self {
            Error::InScenario { .. } => self,
            other => Error::InScenario {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
