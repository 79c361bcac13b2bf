use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{chunk_text, Collection, Embedder, IndexConfig, KnowledgeError, KnowledgeStore};

/// Corpus listing, e.g.
///
/// ```toml
/// [[source]]
/// path = "documents/intervals.txt"
/// collection = "documents"
/// title = "Intervals and durations"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "source")]
    pub sources: Vec<ManifestSource>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub path: PathBuf,
    pub collection: Collection,
    pub title: String,
    /// Defaults to the file stem.
    pub id: Option<String>,
}

impl ManifestSource {
    pub fn source_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.path.display().to_string())
        })
    }
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self, KnowledgeError> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| KnowledgeError::Manifest(e.to_string()))?;
        m.base = base.to_path_buf();
        let mut ids: Vec<String> = m.sources.iter().map(ManifestSource::source_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(KnowledgeError::Manifest(format!("source id {} listed twice", w[0])));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = fs::read_to_string(path)
            .map_err(|e| KnowledgeError::Manifest(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, source: &ManifestSource) -> PathBuf {
        self.base.join(&source.path)
    }
}

/// Chunks, embeds and indexes every source of the manifest.
pub fn build_store(
    manifest: &Manifest,
    embedder: &dyn Embedder,
    config: IndexConfig,
) -> Result<KnowledgeStore, KnowledgeError> {
    let mut store = KnowledgeStore::for_embedder(config, embedder)?;
    for source in &manifest.sources {
        let path = manifest.resolve(source);
        let text = fs::read_to_string(&path)
            .map_err(|e| KnowledgeError::Manifest(format!("{}: {e}", path.display())))?;
        let id = source.source_id();
        let chunks = chunk_text(&id, source.collection, &text);
        log::info!("{}: {} chunks into {}", path.display(), chunks.len(), source.collection);
        store.add_chunks(embedder, chunks)?;
        store.set_title(id, source.title.clone());
    }
    Ok(store)
}
