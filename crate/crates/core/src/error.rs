use std::path::PathBuf;

use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::llm::LlmError;
use crate::parser::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the store, the syscalls and the semantic APIs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("invalid directory {0:?}")]
    InvalidDirectory(String),
    #[error("file {directory}/{name} not found")]
    NotFound { directory: String, name: String },
    #[error("no file named {0:?} in any directory")]
    NameNotFound(String),
    #[error("file name {name:?} is ambiguous, found in directories {directories:?}")]
    AmbiguousTarget { name: String, directories: Vec<String> },
    #[error("file {directory}/{name} is locked read-only")]
    FileLocked { directory: String, name: String },
    #[error("directory {0:?} already exists")]
    DirectoryExists(String),
    #[error("selection matched no files")]
    EmptyResult,
    #[error("query is empty")]
    EmptyQuery,
    #[error("a match mode (and/or) is required for more than one keyword")]
    MissingMode,
    #[error("missing argument: {0}")]
    MissingArgument(&'static str),
    #[error("cannot join a file with itself")]
    SelfJoin,
    #[error("no text extractor registered for {0:?}")]
    ExtractorUnsupported(PathBuf),
    #[error("path {path:?} unreadable: {reason}")]
    PathUnreadable { path: PathBuf, reason: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("root directory {0:?} missing")]
    RootMissing(PathBuf),
    #[error("disk mirror is not enabled")]
    MirrorDisabled,
    #[error("supervisor already running")]
    AlreadyRunning,
    #[error("scan interval must be at least 100 ms, got {0}")]
    IntervalTooShort(u64),
    #[error("no version of {0} recorded at or before the requested date")]
    NoVersionBefore(String),
    #[error("{key} has {available} versions, cannot go back {requested}")]
    TooFewVersions { key: String, available: usize, requested: usize },
    #[error("no version history for {0}")]
    UnknownKey(String),
    #[error("share link not found")]
    LinkNotFound,
    #[error("share link is gone (expired or revoked)")]
    Gone,
    #[error("share store unavailable: {0}")]
    ShareStoreUnavailable(String),
    #[error("pending action {0} not found")]
    PendingNotFound(String),
    #[error("pending action {0} expired before approval")]
    ApprovalTimeout(String),
    #[error("call rejected: {0}")]
    Rejected(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("embedding dimension {got} does not match store dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn not_found(directory: &str, name: &str) -> Self {
        Error::NotFound { directory: directory.to_string(), name: name.to_string() }
    }

    pub(crate) fn locked(directory: &str, name: &str) -> Self {
        Error::FileLocked { directory: directory.to_string(), name: name.to_string() }
    }

    /// Short machine-readable tag used in transcripts and problem details.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidName(_) => "InvalidName",
            Error::InvalidDirectory(_) => "InvalidDirectory",
            Error::NotFound { .. } | Error::NameNotFound(_) => "NotFound",
            Error::AmbiguousTarget { .. } => "AmbiguousTarget",
            Error::FileLocked { .. } => "FileLocked",
            Error::DirectoryExists(_) => "DirectoryExists",
            Error::EmptyResult => "EmptyResult",
            Error::EmptyQuery => "EmptyQuery",
            Error::MissingMode => "MissingMode",
            Error::MissingArgument(_) => "MissingArgument",
            Error::SelfJoin => "SelfJoin",
            Error::ExtractorUnsupported(_) => "ExtractorUnsupported",
            Error::PathUnreadable { .. } => "PathUnreadable",
            Error::CorruptSnapshot(_) => "CorruptSnapshot",
            Error::RootMissing(_) => "RootMissing",
            Error::MirrorDisabled => "MirrorDisabled",
            Error::AlreadyRunning => "AlreadyRunning",
            Error::IntervalTooShort(_) => "IntervalTooShort",
            Error::NoVersionBefore(_) => "NoVersionBefore",
            Error::TooFewVersions { .. } => "TooFewVersions",
            Error::UnknownKey(_) => "UnknownKey",
            Error::LinkNotFound => "NotFound",
            Error::Gone => "Gone",
            Error::ShareStoreUnavailable(_) => "ShareStoreUnavailable",
            Error::PendingNotFound(_) => "PendingNotFound",
            Error::ApprovalTimeout(_) => "ApprovalTimeout",
            Error::Rejected(_) => "Rejected",
            Error::Config(_) => "Config",
            Error::Precondition(_) => "Precondition",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::Embedding(e) => e.kind(),
            Error::Llm(e) => e.kind(),
            Error::Parse(e) => e.kind(),
            Error::Io(_) => "Io",
        }
    }
}
