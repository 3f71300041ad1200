//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: usage and
//! configuration problems exit 1, data problems exit 2, internal numerical
//! faults exit 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- usage / configuration ---
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown architecture '{0}' (valid: MedSingleTask, MedMultiTask, MedSpan, MedIdentifiers, MedIDTyped)")]
    UnknownArchitecture(String),
    #[error("output directory {0} exists and is not empty (pass --force to overwrite)")]
    OutputDirNotEmpty(String),

    // --- data ---
    #[error("{file}:{line}: malformed annotation line: {msg}")]
    MalformedLine {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("offset out of range: [{start}, {end}) in text of length {len}")]
    OffsetOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("mention text mismatch: annotation says {annotated:?}, text has {actual:?}")]
    TextMismatch { annotated: String, actual: String },
    #[error("label '{value}' not in schema for task '{task}'")]
    LabelNotInSchema { task: String, value: String },
    #[error("infeasible synthetic corpus spec: {0}")]
    InfeasibleSpec(String),
    #[error("insufficient documents: {docs} documents for {parts} nonzero partitions")]
    InsufficientDocuments { docs: usize, parts: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("mention [{start}, {end}) covers no non-special token")]
    NoTokenOverlap { start: usize, end: usize },
    #[error("target spans {width} pieces but the window holds at most {max}")]
    TargetTooWide { width: usize, max: usize },
    #[error("overlapping token ranges: [{a0}, {a1}] and [{b0}, {b1}]")]
    OverlappingRanges {
        a0: usize,
        a1: usize,
        b0: usize,
        b1: usize,
    },
    #[error("mention [{start}, {end}) lies outside every sentence")]
    MentionOutsideSentences { start: usize, end: usize },
    #[error("task '{task}' has {observed} observed class(es) in training data; need at least 2")]
    TooFewClasses { task: String, observed: usize },
    #[error("document id sets differ between gold and predictions: {0}")]
    DocIdMismatch(String),
    #[error("mention sets differ between gold and predictions: {0}")]
    MentionSetMismatch(String),
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    // --- internal numerical faults ---
    #[error("non-finite gradient in parameter block '{0}'")]
    NonFiniteGradient(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownArchitecture(_) | Error::OutputDirNotEmpty(_) => 1,
            Error::NonFiniteGradient(_) | Error::Numerical(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
