//! PTB-XL ingestion: WFDB header/signal decoding, metadata, label derivation and fold selection.

mod dataset;
mod header;
mod labels;
mod record;

pub use dataset::{MetadataRow, PtbXl, RecordSource};
pub use header::{parse_header, render_header, LeadSpec, SignalHeader, StorageFormat};
pub use labels::{
    derive_labels, parse_scp_codes, Labeling, ScpAnnotation, StatementDictionary, StatementEntry,
    StatementKind,
};
pub use record::{encode_signal, load_record, CanonicalRecord, EcgRecord, Sex, LEAD_NAMES};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed header (line {line}): {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unsupported storage format {0:?}; only format 16 is supported")]
    UnsupportedFormat(String),
    #[error("signal length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite sample in lead {lead}")]
    NonFiniteSample { lead: String },
    #[error("unknown SCP code {0:?}")]
    UnknownCode(String),
    #[error("fold {0} out of range 1..=10")]
    FoldOutOfRange(i64),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("unknown record id {0}")]
    UnknownRecord(u32),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}
