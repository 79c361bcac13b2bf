use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize, Chunk, Collection, CollectionFilter, Embedder, Hnsw, IndexConfig, KnowledgeError};

pub const INDEX_VERSION: u32 = 1;
const FORMAT: &str = "ecgrag-knowledge-index";
const HEADER_FILE: &str = "index.json";
const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedChunk {
    pub chunk: Chunk,
    pub vector: Vec<f64>,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk: Chunk,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchResults {
    pub hits: Vec<Hit>,
    /// Set when every searched collection was empty.
    pub empty_index: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct CollectionIndex {
    chunks: Vec<Chunk>,
    graph: Hnsw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    config: IndexConfig,
    embedder: String,
    dim: usize,
    titles: BTreeMap<String, String>,
    collections: BTreeMap<Collection, CollectionIndex>,
    ids: HashSet<String>,
}

impl KnowledgeStore {
    pub fn new(config: IndexConfig, embedder: impl Into<String>, dim: usize) -> Result<Self, KnowledgeError> {
        if dim == 0 {
            return Err(KnowledgeError::InvalidConfig("dimension 0".into()));
        }
        let mut collections = BTreeMap::new();
        for c in Collection::ALL {
            collections.insert(
                c,
                CollectionIndex {
                    chunks: Vec::new(),
                    graph: Hnsw::new(config, dim)?,
                },
            );
        }
        Ok(Self {
            config,
            embedder: embedder.into(),
            dim,
            titles: BTreeMap::new(),
            collections,
            ids: HashSet::new(),
        })
    }

    pub fn for_embedder(config: IndexConfig, embedder: &dyn Embedder) -> Result<Self, KnowledgeError> {
        Self::new(config, embedder.id(), embedder.dim())
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn collection_len(&self, c: Collection) -> usize {
        self.collections[&c].chunks.len()
    }

    pub fn chunks(&self, c: Collection) -> &[Chunk] {
        &self.collections[&c].chunks
    }

    pub fn title(&self, source_id: &str) -> Option<&str> {
        self.titles.get(source_id).map(String::as_str)
    }

    pub fn set_title(&mut self, source_id: impl Into<String>, title: impl Into<String>) {
        self.titles.insert(source_id.into(), title.into());
    }

    pub fn insert(&mut self, item: EmbeddedChunk) -> Result<(), KnowledgeError> {
        if item.embedder != self.embedder {
            return Err(KnowledgeError::EmbedderMismatch {
                expected: self.embedder.clone(),
                found: item.embedder,
            });
        }
        if item.vector.len() != self.dim {
            return Err(KnowledgeError::DimensionMismatch {
                expected: self.dim,
                found: item.vector.len(),
            });
        }
        if self.ids.contains(&item.chunk.id) {
            return Err(KnowledgeError::DuplicateId(item.chunk.id));
        }
        let v = normalize(&item.vector)?;
        let index = self.collections.get_mut(&item.chunk.collection).expect("both collections exist");
        index.graph.insert(&v)?;
        self.ids.insert(item.chunk.id.clone());
        index.chunks.push(item.chunk);
        Ok(())
    }

    /// Embeds in batches and inserts; stops at the first error.
    pub fn add_chunks(&mut self, embedder: &dyn Embedder, chunks: Vec<Chunk>) -> Result<(), KnowledgeError> {
        self.check_embedder(embedder)?;
        let mut seen = HashSet::new();
        if let Some(c) = chunks.iter().find(|c| self.ids.contains(&c.id) || !seen.insert(&c.id)) {
            return Err(KnowledgeError::DuplicateId(c.id.clone()));
        }
        for batch in chunks.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
            let vectors = embedder.embed(&texts)?;
            if vectors.len() != batch.len() {
                return Err(KnowledgeError::ProviderUnavailable(format!(
                    "{} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            for (chunk, vector) in batch.iter().zip(vectors) {
                self.insert(EmbeddedChunk {
                    chunk: chunk.clone(),
                    vector,
                    embedder: self.embedder.clone(),
                })?;
            }
        }
        Ok(())
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<(), KnowledgeError> {
        if embedder.id() != self.embedder {
            return Err(KnowledgeError::EmbedderMismatch {
                expected: self.embedder.clone(),
                found: embedder.id(),
            });
        }
        Ok(())
    }

    /// Top-k chunks by cosine similarity, ties broken by chunk id.
    pub fn search_vector(&self, query: &[f64], filter: CollectionFilter, k: usize) -> Result<SearchResults, KnowledgeError> {
        if k == 0 {
            return Err(KnowledgeError::InvalidQuery("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(KnowledgeError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let q = normalize(query)?;
        let mut hits = Vec::new();
        let mut searched_any = false;
        for (c, index) in self.collections.iter().filter(|(c, _)| filter.includes(**c)) {
            searched_any |= !index.chunks.is_empty();
            log::trace!("searching {c} ({} chunks)", index.chunks.len());
            hits.extend(index.graph.search(&q, k, self.config.ef_search).into_iter().map(|(id, similarity)| Hit {
                chunk: index.chunks[id as usize].clone(),
                similarity,
            }));
        }
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.chunk.id.cmp(&b.chunk.id)));
        hits.truncate(k);
        Ok(SearchResults {
            hits,
            empty_index: !searched_any,
        })
    }

    pub fn search(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        filter: CollectionFilter,
        k: usize,
    ) -> Result<SearchResults, KnowledgeError> {
        self.check_embedder(embedder)?;
        if k == 0 {
            return Err(KnowledgeError::InvalidQuery("k must be at least 1".into()));
        }
        let searched: usize = Collection::ALL
            .iter()
            .filter(|c| filter.includes(**c))
            .map(|c| self.collection_len(*c))
            .sum();
        if searched == 0 {
            return Ok(SearchResults {
                hits: Vec::new(),
                empty_index: true,
            });
        }
        let v = embedder
            .embed(&[query])?
            .pop()
            .ok_or_else(|| KnowledgeError::ProviderUnavailable("no vector returned".into()))?;
        self.search_vector(&v, filter, k)
    }

    /// Writes a header with version and checksums plus two files per collection.
    pub fn persist(&self, dir: &Path) -> Result<(), KnowledgeError> {
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (c, index) in &self.collections {
            let graph = GraphFile {
                chunks: index.chunks.clone(),
                links: index.graph.links().to_vec(),
                entry: index.graph.entry(),
            };
            let json = serde_json::to_vec(&graph).map_err(|e| KnowledgeError::Io(e.to_string()))?;
            let vectors: Vec<u8> = index.graph.vectors().iter().flat_map(|v| v.to_le_bytes()).collect();
            for (name, bytes) in [(format!("{c}.json"), json), (format!("{c}.vec"), vectors)] {
                files.insert(name.clone(), hex(&Sha256::digest(&bytes)));
                fs::write(dir.join(name), bytes)?;
            }
        }
        let header = Header {
            format: FORMAT.into(),
            version: INDEX_VERSION,
            embedder: self.embedder.clone(),
            dim: self.dim,
            config: self.config,
            titles: self.titles.clone(),
            files,
        };
        let text = serde_json::to_string_pretty(&header).map_err(|e| KnowledgeError::Io(e.to_string()))?;
        fs::write(dir.join(HEADER_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let corrupt = |m: String| KnowledgeError::CorruptIndex(m);
        let text = fs::read_to_string(dir.join(HEADER_FILE))?;
        let header: Header = serde_json::from_str(&text).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(corrupt(format!("unknown format {:?}", header.format)));
        }
        if header.version != INDEX_VERSION {
            return Err(corrupt(format!("version {} (expected {INDEX_VERSION})", header.version)));
        }
        let mut store = Self::new(header.config, header.embedder, header.dim)?;
        store.titles = header.titles;
        let read_checked = |name: String| -> Result<Vec<u8>, KnowledgeError> {
            let expected = header.files.get(&name).ok_or_else(|| corrupt(format!("no checksum for {name}")))?;
            let bytes = fs::read(dir.join(&name))?;
            if &hex(&Sha256::digest(&bytes)) != expected {
                return Err(corrupt(format!("checksum mismatch in {name}")));
            }
            Ok(bytes)
        };
        for c in Collection::ALL {
            let graph: GraphFile = serde_json::from_slice(&read_checked(format!("{c}.json"))?)
                .map_err(|e| corrupt(format!("{c}: {e}")))?;
            let raw = read_checked(format!("{c}.vec"))?;
            if raw.len() % 8 != 0 {
                return Err(corrupt(format!("{c}.vec is not a whole number of f64 values")));
            }
            let vectors: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            if graph.chunks.len() != graph.links.len() {
                return Err(corrupt(format!("{c}: {} chunks for {} nodes", graph.chunks.len(), graph.links.len())));
            }
            if let Some(bad) = graph.chunks.iter().find(|ch| ch.collection != c) {
                return Err(corrupt(format!("chunk {} filed under {c}", bad.id)));
            }
            for ch in &graph.chunks {
                if !store.ids.insert(ch.id.clone()) {
                    return Err(corrupt(format!("duplicate chunk id {}", ch.id)));
                }
            }
            let hnsw = Hnsw::from_parts(header.config, header.dim, vectors, graph.links, graph.entry)?;
            store.collections.insert(
                c,
                CollectionIndex {
                    chunks: graph.chunks,
                    graph: hnsw,
                },
            );
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    embedder: String,
    dim: usize,
    config: IndexConfig,
    titles: BTreeMap<String, String>,
    files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    chunks: Vec<Chunk>,
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
