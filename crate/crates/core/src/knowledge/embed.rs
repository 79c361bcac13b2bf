use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::KnowledgeError;

pub const LOCAL_DIM: usize = 256;
const BUCKETS: usize = 4096;
const NGRAMS: std::ops::RangeInclusive<usize> = 2..=4;

pub trait Embedder: Send + Sync {
    /// Identifier plus version; vectors from different ids never share an index.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, KnowledgeError>;
}

/// L2-normalized copy; rejects non-finite and zero vectors.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, KnowledgeError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KnowledgeError::InvalidVector("non-finite component".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(KnowledgeError::InvalidVector("zero norm".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

/// Offline embedder: character n-gram counts hashed into buckets, then a seeded
/// Gaussian projection to [`LOCAL_DIM`] dimensions.
#[derive(Clone)]
pub struct LocalEmbedder {
    seed: u64,
    projection: Arc<Vec<f64>>,
}

impl LocalEmbedder {
    pub const DEFAULT_SEED: u64 = 0x5eed;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..BUCKETS * LOCAL_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            seed,
            projection: Arc::new(projection),
        }
    }

    fn counts(text: &str) -> Vec<f64> {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts = vec![0.0; BUCKETS];
        let mut buf = String::new();
        for n in NGRAMS {
            for w in padded.windows(n) {
                buf.clear();
                buf.extend(w);
                counts[(fnv1a(buf.as_bytes()) % BUCKETS as u64) as usize] += 1.0;
            }
        }
        counts
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; LOCAL_DIM];
        for (b, c) in Self::counts(text).iter().enumerate().filter(|(_, c)| **c > 0.0) {
            let row = &self.projection[b * LOCAL_DIM..(b + 1) * LOCAL_DIM];
            v.iter_mut().zip(row).for_each(|(x, r)| *x += c * r);
        }
        // A single space always yields one bigram, so the norm is non-zero.
        normalize(&v).expect("projection of a non-empty count vector")
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl std::fmt::Debug for LocalEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalEmbedder").field("seed", &self.seed).finish()
    }
}

impl Embedder for LocalEmbedder {
    fn id(&self) -> String {
        format!("local-ngram-v1/seed={}/d={LOCAL_DIM}", self.seed)
    }

    fn dim(&self) -> usize {
        LOCAL_DIM
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, KnowledgeError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    /// Full URL of an OpenAI-compatible `/embeddings` endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub dim: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "ECGRAG_EMBEDDING_API_KEY".into(),
            dim: 1536,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, KnowledgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| KnowledgeError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteEmbedderConfig {
        &self.config
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote/{}/d={}", self.config.model, self.config.dim)
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, KnowledgeError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            KnowledgeError::ProviderUnavailable(format!("environment variable {} is not set", self.config.api_key_env))
        })?;
        let unavailable = |e: reqwest::Error| KnowledgeError::ProviderUnavailable(e.to_string());
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&EmbeddingRequest {
                model: &self.config.model,
                input: texts,
            })
            .send()
            .map_err(unavailable)?;
        let status = response.status();
        if !status.is_success() {
            return Err(KnowledgeError::ProviderUnavailable(format!("HTTP {status}")));
        }
        let mut body: EmbeddingResponse = response.json().map_err(unavailable)?;
        if body.data.len() != texts.len() {
            return Err(KnowledgeError::ProviderUnavailable(format!(
                "{} embeddings for {} inputs",
                body.data.len(),
                texts.len()
            )));
        }
        body.data.sort_by_key(|d| d.index);
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dim {
                    return Err(KnowledgeError::DimensionMismatch {
                        expected: self.config.dim,
                        found: d.embedding.len(),
                    });
                }
                normalize(&d.embedding)
            })
            .collect()
    }
}
