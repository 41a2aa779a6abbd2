//! Error types shared across the pipeline.

use serde::{Deserialize, Serialize};

/// Stable machine-readable error classification.
///
/// Kinds cross the HTTP boundary verbatim so that clients can map failures
/// back to exit codes without parsing message text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// Malformed input document (config file, JSON, lexicon file).
    Parse,
    /// A structurally valid document violating an invariant.
    Validation,
    /// Configuration or credential fault (missing endpoint, missing API key).
    Config,
    /// A required file is absent.
    MissingFile,
    /// Input matches no known schema or fails schema validation.
    Schema,
    /// Duplicate CWE identifier in an ingest batch.
    DuplicateId,
    /// Filesystem failure.
    Io,
    /// Persisted artifact carries an unknown format version.
    Version,
    /// Embedding provider failure.
    Embedding,
    /// Vector length disagreement.
    DimensionMismatch,
    /// Cosine of a zero vector.
    ZeroVector,
    /// Prompt would not fit the model context window.
    ContextOverflow,
    /// Chat provider failure after bounded retries.
    Provider,
    /// Provider call exceeded its deadline.
    Timeout,
    /// Replay-mode cache lookup missed.
    CacheMiss,
    /// LLM agent failure (provider failure surfaced through an agent).
    Agent,
    /// Agent response violates the structured-output contract.
    MalformedAgentOutput,
    /// Unclosed lexical construct in HDL source.
    UnterminatedConstruct,
    /// Prompt template rendering failure (unbound placeholder).
    Template,
    /// Evaluation over zero cases.
    EmptyDataset,
    /// Anything that does not fit the categories above.
    Internal,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::Parse => "Parse",
            ErrorKind::Validation => "Validation",
            ErrorKind::Config => "Config",
            ErrorKind::MissingFile => "MissingFile",
            ErrorKind::Schema => "Schema",
            ErrorKind::DuplicateId => "DuplicateId",
            ErrorKind::Io => "Io",
            ErrorKind::Version => "Version",
            ErrorKind::Embedding => "Embedding",
            ErrorKind::DimensionMismatch => "DimensionMismatch",
            ErrorKind::ZeroVector => "ZeroVector",
            ErrorKind::ContextOverflow => "ContextOverflow",
            ErrorKind::Provider => "Provider",
            ErrorKind::Timeout => "Timeout",
            ErrorKind::CacheMiss => "CacheMiss",
            ErrorKind::Agent => "Agent",
            ErrorKind::MalformedAgentOutput => "MalformedAgentOutput",
            ErrorKind::UnterminatedConstruct => "UnterminatedConstruct",
            ErrorKind::Template => "Template",
            ErrorKind::EmptyDataset => "EmptyDataset",
            ErrorKind::Internal => "Internal",
        }
    }
}

/// Pipeline error: a kind plus a human-readable message.
#[derive(Debug, Clone, thiserror::Error, Serialize, Deserialize)]
#[error("{} error: {message}", kind.as_str())]
pub struct Error {
    pub kind: ErrorKind,
    pub message: String,
}

impl Error {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Parse, msg)
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, msg)
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, msg)
    }
    pub fn missing_file(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::MissingFile, msg)
    }
    pub fn schema(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Schema, msg)
    }
    pub fn io(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, msg)
    }
    pub fn embedding(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Embedding, msg)
    }
    pub fn dimension_mismatch(expected: usize, got: usize) -> Self {
        Self::new(
            ErrorKind::DimensionMismatch,
            format!("expected embedding dimension {expected}, got {got}"),
        )
    }
    pub fn provider(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Provider, msg)
    }
    pub fn agent(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Agent, msg)
    }
    pub fn malformed_output(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::MalformedAgentOutput, msg)
    }
    pub fn template(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Template, msg)
    }
    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, msg)
    }

    pub fn io_at(path: &std::path::Path, err: &std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    /// Process exit code for this error: 2 = unreadable/invalid input,
    /// 3 = configuration or credential fault, 4 = empty or fully failed run,
    /// 5 = provider-side failure, 1 = internal fault.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Parse
            | ErrorKind::Schema
            | ErrorKind::MissingFile
            | ErrorKind::Io
            | ErrorKind::Version
            | ErrorKind::DuplicateId
            | ErrorKind::DimensionMismatch
            | ErrorKind::UnterminatedConstruct
            | ErrorKind::ZeroVector => 2,
            ErrorKind::Config | ErrorKind::Validation | ErrorKind::Template => 3,
            ErrorKind::EmptyDataset => 4,
            ErrorKind::Provider
            | ErrorKind::Timeout
            | ErrorKind::CacheMiss
            | ErrorKind::Embedding
            | ErrorKind::ContextOverflow
            | ErrorKind::Agent
            | ErrorKind::MalformedAgentOutput => 5,
            ErrorKind::Internal => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
