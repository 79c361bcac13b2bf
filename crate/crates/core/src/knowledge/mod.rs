//! Two-collection vector store: sentence-preserving chunking, pluggable
//! embedders, a cosine HNSW graph per collection and on-disk persistence.

mod chunk;
mod embed;
mod hnsw;
mod manifest;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_spans, chunk_text, pack, sentence_spans, Chunk, Span, MAX_CHUNK_CHARS};
pub use embed::{normalize, Embedder, LocalEmbedder, RemoteEmbedder, RemoteEmbedderConfig, LOCAL_DIM};
pub use hnsw::{Hnsw, IndexConfig};
pub use manifest::{build_store, Manifest, ManifestSource};
pub use store::{EmbeddedChunk, Hit, KnowledgeStore, SearchResults, INDEX_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("chunk id {0} already indexed")]
    DuplicateId(String),
    #[error("vector dimension {found}, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedder {found} does not match index embedder {expected}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("index is empty")]
    EmptyIndex,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KnowledgeError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collection {
    Documents,
    Knowledge,
}

impl Collection {
    pub const ALL: [Collection; 2] = [Collection::Documents, Collection::Knowledge];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Documents => "documents",
            Self::Knowledge => "knowledge",
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Collection {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "documents" => Ok(Self::Documents),
            "knowledge" => Ok(Self::Knowledge),
            other => Err(KnowledgeError::InvalidQuery(format!("unknown collection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectionFilter {
    Documents,
    Knowledge,
    #[default]
    Both,
}

impl CollectionFilter {
    pub fn includes(&self, c: Collection) -> bool {
        match self {
            Self::Documents => c == Collection::Documents,
            Self::Knowledge => c == Collection::Knowledge,
            Self::Both => true,
        }
    }
}

impl From<Collection> for CollectionFilter {
    fn from(c: Collection) -> Self {
        match c {
            Collection::Documents => Self::Documents,
            Collection::Knowledge => Self::Knowledge,
        }
    }
}

impl FromStr for CollectionFilter {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("both") {
            Ok(Self::Both)
        } else {
            s.parse::<Collection>().map(Self::from)
        }
    }
}

impl fmt::Display for CollectionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Documents => "documents",
            Self::Knowledge => "knowledge",
            Self::Both => "both",
        })
    }
}
