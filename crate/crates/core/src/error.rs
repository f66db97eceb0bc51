//! Error types shared across the harness.

use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for probe construction, running, and scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row} in {path}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("duplicate probe id {id:?}")]
    DuplicateId { id: String },

    #[error("unresolvable media path {path} (relative to {base})")]
    UnresolvablePath { path: String, base: PathBuf },

    #[error("invalid probe {id:?}: {reason}")]
    InvalidProbe { id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few manifest entries: need {needed}, have {have}")]
    TooFewEntries { needed: usize, have: usize },

    #[error("could not draw distinct distractors for {id:?} after {retries} retries")]
    DistractorExhausted { id: String, retries: usize },

    #[error("ordering size {n} exceeds cap {cap}; pass an explicit cap to override")]
    OrderingCapExceeded { n: usize, cap: usize },

    #[error("unknown prompt template {template:?} for mode {mode}")]
    UnknownTemplate { template: String, mode: String },

    #[error("endpoint error ({class}): {message}")]
    Endpoint { class: ErrorClass, message: String },

    #[error("trial store error: {0}")]
    Store(String),

    #[error("cache key {key} already recorded with a different response")]
    CacheConflict { key: String },

    #[error("incomplete variant groups: missing {missing:?}{more}",
        more = if *.truncated { " (truncated)" } else { "" })]
    IncompleteGroups {
        missing: Vec<(String, String)>,
        truncated: bool,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Endpoint failure classes recorded per trial.
///
/// Distinguishes retryable transport problems from terminal ones so trial
/// records can state exactly how a call failed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// 401/403 from the endpoint. Never retried.
    Auth,
    /// Request timed out after all retries.
    Timeout,
    /// Connection-level failure after all retries.
    Connect,
    /// Got a response, but the body does not match the wire schema.
    WireFormat,
    /// 429/5xx persisted through all retries.
    RateLimited,
    /// Attachment bytes could not be read from disk.
    Attachment,
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorClass::Auth => "auth",
            ErrorClass::Timeout => "timeout",
            ErrorClass::Connect => "connect",
            ErrorClass::WireFormat => "wire_format",
            ErrorClass::RateLimited => "rate_limited",
            ErrorClass::Attachment => "attachment",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
